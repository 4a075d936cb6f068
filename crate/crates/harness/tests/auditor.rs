use dagmig_core::engine::migrate;
use dagmig_core::model::MigrationType;
use dagmig_harness::naive::{run_naive, run_naive_plus};
use dagmig_harness::{audit, Category, Lab};
use dagmig_synth::{GenConfig, DIASPORA, MASTODON};

fn lab(users: usize, seed: u64) -> Lab {
    let mut lab = Lab::new().unwrap();
    lab.populate(
        DIASPORA,
        &GenConfig::default().with_users(users).with_seed(seed),
    )
    .unwrap();
    lab
}

#[test]
fn an_untouched_dataset_is_clean() {
    let lab = lab(60, 3);
    let a = audit(&lab.world, &lab.baseline);
    assert!(
        a.is_clean(),
        "{:?}",
        a.apps
            .iter()
            .flat_map(|x| &x.findings)
            .take(5)
            .collect::<Vec<_>>()
    );
}

#[test]
fn naive_migration_leaves_findings() {
    let lab = lab(60, 3);
    let route = lab.route(DIASPORA, MASTODON).unwrap();
    for u in lab.users(DIASPORA).unwrap().iter().take(30) {
        run_naive(&lab.world, u, &route).unwrap();
    }
    let a = audit(&lab.world, &lab.baseline);
    assert!(!a.is_clean());
    assert!(a.total(Category::DataLoss) + a.total(Category::Dangling) > 0);
}

#[test]
fn locked_naive_still_loses_data() {
    let lab = lab(60, 3);
    let route = lab.route(DIASPORA, MASTODON).unwrap();
    for u in lab.users(DIASPORA).unwrap().iter().take(30) {
        run_naive_plus(&lab.world, u, &route).unwrap();
    }
    assert!(audit(&lab.world, &lab.baseline).total(Category::DataLoss) > 0);
}

#[test]
fn dependency_aware_migration_of_everyone_is_clean() {
    let lab = lab(60, 3);
    for u in lab.users(DIASPORA).unwrap() {
        let ctx = lab.context(&u, MASTODON, MigrationType::Deletion).unwrap();
        migrate(&lab.world, &ctx).unwrap();
    }
    let a = audit(&lab.world, &lab.baseline);
    assert!(a.is_clean());
    assert!(lab.users(DIASPORA).unwrap().is_empty());
}

#[test]
fn state_round_trips_through_a_file() {
    let lab = lab(20, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lab.json");
    lab.save(&path).unwrap();
    let back = Lab::load(&path, dagmig_synth::Fixtures::builtin().unwrap()).unwrap();
    assert_eq!(back.world.state(), lab.world.state());
    assert_eq!(back.baseline.len(), lab.baseline.len());
}
