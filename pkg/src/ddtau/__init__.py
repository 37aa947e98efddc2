"""Double-dimer correlators, twisted Kasteleyn determinants and isomonodromic tau-functions."""
