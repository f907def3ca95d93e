# Utilities for the discrepancy-minimization toolkit
