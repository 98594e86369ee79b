"""Indoor-space authentication from sparse keypoints of 3D point clouds."""
