use aggrefeed::graph::{build_consensus_basis, generate_er_balanced, stacked_ones, NetworkGraph};
use aggrefeed::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_graphs_are_valid(n in 2usize..12, p in 0.3f64..1.0, seed in any::<u64>()) {
        let g = generate_er_balanced(n, p, seed).unwrap();
        prop_assert!(g.validate().is_ok());
        let lap = g.laplacian(2);
        let ones = stacked_ones(n, 2);
        prop_assert!((&lap.laplacian_big * &ones).amax() < 1e-12);
        prop_assert!((ones.transpose() * &lap.laplacian_big).amax() < 1e-12);
        prop_assert_eq!(g, generate_er_balanced(n, p, seed).unwrap());
    }

    #[test]
    fn basis_is_orthonormal_complement(n in 2usize..10, d in 1usize..4) {
        let b = build_consensus_basis(n, d).unwrap();
        let r = &b.r_matrix;
        let k = r.ncols();
        prop_assert!((r.transpose() * r - DMatrix::identity(k, k)).amax() < 1e-12);
        prop_assert!((r.transpose() * stacked_ones(n, d)).amax() < 1e-12);
    }

    #[test]
    fn text_formats_round_trip(n in 2usize..8, seed in any::<u64>()) {
        let g = generate_er_balanced(n, 0.6, seed).unwrap();
        let csv = NetworkGraph::from_csv_str(&g.to_csv_string()).unwrap();
        prop_assert_eq!(&csv, &g);
        let json = NetworkGraph::from_json_str(&serde_json::to_string(&g.to_json()).unwrap()).unwrap();
        prop_assert_eq!(&json, &g);
    }
}

#[test]
fn malformed_graph_files_are_rejected() {
    assert!(NetworkGraph::from_csv_str("0,1,abc\n").is_err());
    assert!(NetworkGraph::from_json_str("{\"n\": 2, \"edges\": [[0, 5, 1.0]]}").is_err());
    // unbalanced: a single arc
    let g = NetworkGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
    assert!(g.validate().is_err());
}
