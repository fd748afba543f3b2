use fairfed_sim::config::{DatasetKind, ExperimentConfig, PartitionName};
use fairfed_sim::harness;

fn blobs(partition: PartitionName, beta: f64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetKind::Blobs,
        partition,
        dirichlet_beta: beta,
        pool_size: 10_000,
        num_clients: 16,
        input_dim: 10,
        num_classes: 10,
        ..Default::default()
    }
}

#[test]
fn iid_clients_match_pool_labels() {
    let rows = harness::partition_report(&blobs(PartitionName::Iid, 1.0), 0, None).unwrap();
    let worst = rows.iter().map(|r| r.tv_to_pool).fold(0.0, f64::max);
    assert!(worst < 0.05, "max TV {worst}");
}

#[test]
fn strong_skew_concentrates_labels() {
    let rows = harness::partition_report(&blobs(PartitionName::Dirichlet, 0.05), 0, None).unwrap();
    let skewed = rows.iter().filter(|r| r.top2_mass >= 0.8).count();
    assert!(skewed >= 8, "{skewed} of 16 clients have top-2 mass >= 0.8");
}

#[test]
fn report_is_deterministic_per_seed() {
    let cfg = blobs(PartitionName::Dirichlet, 0.5);
    assert_eq!(
        harness::partition_report(&cfg, 4, None).unwrap(),
        harness::partition_report(&cfg, 4, None).unwrap()
    );
    assert_ne!(
        harness::partition_report(&cfg, 4, None).unwrap(),
        harness::partition_report(&cfg, 5, None).unwrap()
    );
}
