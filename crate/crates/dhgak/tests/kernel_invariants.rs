mod common;

use dhgak::alignment::ClusterMethod;
use dhgak::config::KernelParams;
use dhgak::embedder::Backend;
use dhgak::kernel::compute_dhgak;
use dhgak::synth::{random_dataset, SynthParams};

#[test]
fn grams_are_psd_at_every_stage_for_every_method() {
    let ds = common::mutag_subset(50);
    let method_sets: Vec<Vec<ClusterMethod>> = vec![
        vec![ClusterMethod::KMeans],
        vec![ClusterMethod::Dbscan {
            eps: None,
            min_pts: 4,
        }],
        vec![ClusterMethod::OracleByGraph],
        vec![
            ClusterMethod::KMeans,
            ClusterMethod::Dbscan {
                eps: None,
                min_pts: 4,
            },
        ],
    ];
    for (i, methods) in method_sets.into_iter().enumerate() {
        let params = KernelParams {
            width: 1,
            max_hop: 2,
            alpha: 0.5,
            cluster_factor: 0.6,
            t_runs: 2,
            seed: 40 + i as u64,
            backend: Backend::OneHot,
            methods,
            ..KernelParams::default()
        };
        let out = compute_dhgak(&ds, &params).unwrap();
        let n = out.summed.num_graphs();
        for (h, g) in out.per_hop.iter().enumerate() {
            common::assert_psd(g.values(), n, &format!("config {i} hop {h}"));
        }
        common::assert_psd(out.summed.values(), n, &format!("config {i} summed"));
        common::assert_psd(
            out.normalized.values(),
            n,
            &format!("config {i} normalized"),
        );
    }
}

#[test]
fn mean_embedding_gram_equals_the_double_sum() {
    for seed in 0..5u64 {
        let ds = random_dataset(
            "TOY",
            &SynthParams {
                num_graphs: 5,
                min_nodes: 3,
                max_nodes: 8,
                num_labels: 3,
                seed: 60 + seed,
                ..SynthParams::default()
            },
        )
        .unwrap();
        let params = KernelParams {
            width: 1,
            max_hop: 2,
            alpha: 0.4,
            cluster_factor: 1.0,
            t_runs: 3,
            seed,
            backend: Backend::OneHot,
            methods: vec![
                ClusterMethod::KMeans,
                ClusterMethod::Dbscan {
                    eps: None,
                    min_pts: 3,
                },
            ],
            ..KernelParams::default()
        };
        let worst = common::mean_vs_double_sum_max_diff(&ds, &params);
        assert!(worst < 1e-10, "seed {seed}: max deviation {worst:e}");
    }
}
