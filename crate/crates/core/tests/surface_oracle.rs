//! BFS cross-checks for the surface-group distance oracle.

use walklab_core::group::GroupModel;

#[test]
fn genus2_norm_matches_bfs_layers_radius4() {
    let m = GroupModel::surface(2).unwrap();
    let ball = m.ball(4, 500_000).unwrap();
    for (w, r) in ball.iter_with_distance() {
        assert_eq!(m.norm(w).unwrap(), r as u64, "word {}", m.format(w));
    }
    println!("spheres: {:?}", ball.sphere_sizes());
}
