"""Surface-constrained multiplicative Kalman filtering at configurable precision."""
