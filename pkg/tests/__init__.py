# adaptive-gamp tests
