"""Quadrature photonic spatial Ising machine simulator."""
