# Numerical services: propagation, estimation, testing, simulation
