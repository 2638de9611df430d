# Attractor Platform: Test Suite
