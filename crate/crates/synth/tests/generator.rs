use std::sync::Arc;

use dagmig_core::store::{AppStore, MetaStore};
use dagmig_synth::{content_hash, generate, Dataset, Fixtures, GenConfig, APPS, DIASPORA};

fn run(app: &str, cfg: &GenConfig) -> (Arc<AppStore>, Dataset) {
    let fx = Fixtures::builtin().unwrap();
    let store = Arc::new(AppStore::new(fx.dag(app).unwrap().clone(), 0));
    let meta = MetaStore::new();
    let ds = generate(cfg, &store, &meta).unwrap();
    (store, ds)
}

#[test]
fn volumes_track_the_configured_rates() {
    let cfg = GenConfig::default().with_users(2000).with_seed(11);
    let (_, ds) = run(DIASPORA, &cfg);
    let v = &cfg.volumes;
    let users = cfg.users as f64;
    for (ty, per_user) in [
        ("post", v.posts),
        ("like", v.likes),
        ("comment", v.comments),
        ("message", v.messages),
        ("photo", v.photos),
        ("notification", v.notifications),
    ] {
        let got = ds.counts.get(ty).copied().unwrap_or(0) as f64 / users;
        let ratio = got / per_user;
        assert!(
            (0.5..=2.0).contains(&ratio),
            "{ty}: {got:.2} per user against {per_user}"
        );
    }
    assert_eq!(ds.counts["person"], 2000);
}

#[test]
fn popular_users_own_a_disproportionate_share() {
    let cfg = GenConfig::default().with_users(2000).with_seed(5);
    let (_, ds) = run(DIASPORA, &cfg);
    let mut order: Vec<usize> = (0..ds.users.len()).collect();
    order.sort_by(|&a, &b| ds.popularity[b].total_cmp(&ds.popularity[a]));
    let top = order.len() / 100;
    let top_share: u64 = order[..top].iter().map(|&i| ds.owned[i]).sum();
    let all: u64 = ds.owned.iter().sum();
    let share = top_share as f64 / all as f64;
    assert!(
        share > 0.05,
        "top 1% of users own {:.1}% of content",
        100.0 * share
    );
}

#[test]
fn same_seed_same_content() {
    let cfg = GenConfig::default().with_users(150).with_seed(9);
    for app in APPS {
        let (a, _) = run(app, &cfg);
        let (b, _) = run(app, &cfg);
        assert_eq!(content_hash(&a), content_hash(&b), "{app}");
    }
    let (a, _) = run(DIASPORA, &cfg);
    let (c, _) = run(DIASPORA, &cfg.clone().with_seed(10));
    assert_ne!(content_hash(&a), content_hash(&c));
}

#[test]
fn every_application_gets_content() {
    let cfg = GenConfig::default().with_users(100).with_seed(2);
    for app in APPS {
        let (store, ds) = run(app, &cfg);
        assert_eq!(ds.users.len(), 100);
        assert_eq!(store.count() as u64, ds.total(), "{app}");
        assert!(ds.total() > 1000, "{app}: {}", ds.total());
    }
}

#[test]
fn bad_configs_are_refused() {
    let fx = Fixtures::builtin().unwrap();
    let store = AppStore::new(fx.dag(DIASPORA).unwrap().clone(), 0);
    let meta = MetaStore::new();
    let mut cfg = GenConfig::default().with_users(0);
    assert!(generate(&cfg, &store, &meta).is_err());
    cfg = GenConfig::default();
    cfg.mutual_rate = 1.5;
    assert!(generate(&cfg, &store, &meta).is_err());
    assert_eq!(store.count(), 0);
}
