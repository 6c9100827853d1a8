"""rit – moving instance segmentation for sparse radar point clouds."""
