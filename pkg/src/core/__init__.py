"""Coverage tracking, objectives, constraints, generation, training and applications."""
