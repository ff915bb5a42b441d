//! Point clouds, exact KNN and umbrella surface features.

mod cloud;
mod knn;
mod umbrella;

pub use cloud::{add, cross, dist_sq, dot3, norm_sq, sub, Point3, PointCloud};
pub use knn::{knn, KdTree, NeighborGraph};
pub use umbrella::{
    azimuthal_order, cartesian_to_polar, direction_vectors, polar_to_cartesian, umbrella_features,
    umbrella_features_with_graph, umbrella_normals, usfe, usfe_from_umbrella, usfe_tape,
    SurfaceFeatures, UmbrellaFeatures, UmbrellaNormals, DEFAULT_UMBRELLA_K, DEGENERATE_EPS,
    PAIR_WIDTH,
};
