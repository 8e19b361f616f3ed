# Ensemble Workers
