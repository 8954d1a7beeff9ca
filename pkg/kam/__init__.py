"""Numerical core: decay spaces, embeddings, the lattice model and the KAM iteration."""
