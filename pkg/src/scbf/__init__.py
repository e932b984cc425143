"""Wong-Zakai approximation of stochastic convective Brinkman-Forchheimer flow on the 2D torus."""
