"""Min-max critical points of the Allen-Cahn energy on closed manifolds."""
