"""Inverse mean curvature flow of spacelike graphs in asymptotically Robertson-Walker spacetimes."""
