# Numerical Services
