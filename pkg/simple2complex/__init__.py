"""Simple2complex: growing series neural networks from shallow plain networks."""
