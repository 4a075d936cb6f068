//! Synthetic social-network datasets. Users get a Pareto popularity
//! score and content is handed out proportionally to it; conversations
//! only happen between friends (mutual follows).

use std::collections::{BTreeMap, BTreeSet};

use dagmig_core::model::{
    AttrRef, DataNode, Flags, MigrationType, NodeId, NodeSelector, SharingGrant, Value,
};
use dagmig_core::store::{AppStore, MetaStore};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Pareto;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fixtures::{profile, Shape};
use crate::SynthError;

/// Entity volumes per user, except `conversations`, which is per
/// friend pair. Defaults follow the proportions of a 1M-user Diaspora
/// dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Volumes {
    pub follows: f64,
    pub posts: f64,
    pub likes: f64,
    pub comments: f64,
    pub conversations: f64,
    pub messages: f64,
    pub photos: f64,
    pub notifications: f64,
}

impl Default for Volumes {
    fn default() -> Self {
        Volumes {
            follows: 2.68,
            posts: 7.56,
            likes: 30.63,
            comments: 13.48,
            conversations: 1.0,
            messages: 5.40,
            photos: 3.69,
            notifications: 46.79,
        }
    }
}

impl Volumes {
    /// Every volume multiplied by `f`, friendship density unchanged.
    pub fn scaled(&self, f: f64) -> Volumes {
        Volumes {
            follows: self.follows,
            conversations: self.conversations,
            posts: self.posts * f,
            likes: self.likes * f,
            comments: self.comments * f,
            messages: self.messages * f,
            photos: self.photos * f,
            notifications: self.notifications * f,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub users: usize,
    pub seed: u64,
    pub pareto_shape: f64,
    pub volumes: Volumes,
    /// Probability that a follow is returned, making the pair friends.
    pub mutual_rate: f64,
    /// Fraction of friend pairs that let each other migrate their
    /// shared conversations.
    pub grant_fraction: f64,
    /// Creation timestamps are drawn from this half-open range.
    pub created_range: (i64, i64),
    /// Share of media stubs that are large videos rather than photos.
    pub video_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            users: 1000,
            seed: 42,
            pareto_shape: 1.16,
            volumes: Volumes::default(),
            mutual_rate: 0.0303,
            grant_fraction: 0.5,
            created_range: (1_500_000_000, 1_600_000_000),
            video_rate: 0.005,
        }
    }
}

impl GenConfig {
    pub fn with_users(mut self, users: usize) -> Self {
        self.users = users;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_owned()));
        if self.users < 1 {
            return bad("user count must be at least 1");
        }
        if !(self.pareto_shape > 0.0 && self.pareto_shape.is_finite()) {
            return bad("Pareto shape must be positive");
        }
        let v = &self.volumes;
        let all = [
            v.follows,
            v.posts,
            v.likes,
            v.comments,
            v.conversations,
            v.messages,
            v.photos,
            v.notifications,
        ];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("volumes must be finite and non-negative");
        }
        for (name, p) in [
            ("mutual_rate", self.mutual_rate),
            ("grant_fraction", self.grant_fraction),
            ("video_rate", self.video_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.created_range.0 >= self.created_range.1 {
            return bad("created_range must be non-empty");
        }
        Ok(())
    }
}

/// What [`generate`] produced, beyond the store contents.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// User roots, in generation order.
    pub users: Vec<NodeId>,
    pub popularity: Vec<f64>,
    /// Friend pairs as indices into `users`, smaller index first.
    pub friends: Vec<(usize, usize)>,
    /// Nodes created per node type.
    pub counts: BTreeMap<String, u64>,
    /// Content nodes owned by each user, root excluded.
    pub owned: Vec<u64>,
    pub grants: usize,
}

impl Dataset {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

const WORDS: &[&str] = &[
    "river", "garden", "coffee", "train", "window", "music", "paper", "winter", "market", "bridge",
    "lamp", "forest", "cloud", "harbor", "letter", "street", "candle", "orbit", "meadow", "signal",
];

struct Gen<'a> {
    rng: ChaCha8Rng,
    store: &'a AppStore,
    cfg: &'a GenConfig,
    out: Dataset,
}

impl Gen<'_> {
    fn words(&mut self, lo: usize, hi: usize) -> String {
        let n = self.rng.random_range(lo..=hi);
        (0..n)
            .map(|_| WORDS[self.rng.random_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn created_after(&mut self, t: i64) -> i64 {
        self.rng
            .random_range(t..self.cfg.created_range.1.max(t + 1))
    }

    fn count(&self, per_user: f64) -> usize {
        (per_user * self.cfg.users as f64).round() as usize
    }

    fn insert(
        &mut self,
        shape: &Shape,
        values: Vec<(&str, Value)>,
        owner: Option<usize>,
    ) -> Result<NodeId, SynthError> {
        let key = self.store.fresh_key();
        let id = NodeId::new(self.store.app().as_str(), shape.node_type, key);
        let attrs: BTreeMap<AttrRef, Value> = values
            .into_iter()
            .filter_map(|(role, v)| shape.attr(role).map(|a| (a, v)))
            .collect();
        self.store.insert(&DataNode {
            id: id.clone(),
            attrs,
            flags: Flags::NATIVE,
        })?;
        *self
            .out
            .counts
            .entry(shape.node_type.to_owned())
            .or_default() += 1;
        if let Some(o) = owner {
            self.out.owned[o] += 1;
        }
        Ok(id)
    }
}

/// Populates `store` (empty or not) with a dataset for its application
/// and records sharing grants in `meta`. The same config always yields
/// the same content.
pub fn generate(
    cfg: &GenConfig,
    store: &AppStore,
    meta: &MetaStore,
) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let p =
        profile(store.app().as_str()).ok_or_else(|| SynthError::NoProfile(store.app().clone()))?;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        store,
        cfg,
        out: Dataset {
            owned: vec![0; cfg.users],
            ..Dataset::default()
        },
    };
    let n = cfg.users;
    let (t0, _) = cfg.created_range;

    let pareto =
        Pareto::new(1.0, cfg.pareto_shape).map_err(|e| SynthError::Config(e.to_string()))?;
    let popularity: Vec<f64> = (0..n).map(|_| pareto.sample(&mut g.rng)).collect();
    let by_pop = WeightedIndex::new(&popularity).map_err(|e| SynthError::Config(e.to_string()))?;

    let mut user_keys = Vec::with_capacity(n);
    let mut user_created = Vec::with_capacity(n);
    for i in 0..n {
        let created = g.created_after(t0);
        let bio = g.words(2, 12);
        let id = g.insert(
            &p.user,
            vec![
                ("handle", Value::from(format!("u{i}"))),
                ("first", Value::from(format!("First{i}"))),
                ("last", Value::from(format!("Last{i}"))),
                ("bio", Value::from(bio)),
                ("created", Value::Int(created)),
            ],
            None,
        )?;
        user_keys.push(id.key);
        user_created.push(created);
        g.out.users.push(id);
    }

    // Follows, and friends where a follow is returned.
    let mut follows = BTreeSet::new();
    let mut friends = BTreeSet::new();
    if n > 1 {
        for _ in 0..g.count(cfg.volumes.follows) {
            let a = g.rng.random_range(0..n);
            let b = by_pop.sample(&mut g.rng);
            if a == b || !follows.insert((a, b)) {
                continue;
            }
            if g.rng.random_bool(cfg.mutual_rate) {
                follows.insert((b, a));
            }
            if follows.contains(&(b, a)) {
                friends.insert((a.min(b), a.max(b)));
            }
        }
    }
    g.out.friends = friends.iter().copied().collect();

    // Posts and what hangs off them.
    let mut posts: Vec<(i64, usize, i64)> = Vec::new();
    if let Some(sh) = &p.post {
        for _ in 0..g.count(cfg.volumes.posts) {
            let u = by_pop.sample(&mut g.rng);
            let created = g.created_after(user_created[u]);
            let text = g.words(3, 20);
            let vis = if g.rng.random_bool(0.8) {
                "public"
            } else {
                "limited"
            };
            let id = g.insert(
                sh,
                vec![
                    ("owner", Value::Int(user_keys[u])),
                    ("text", Value::from(text)),
                    ("vis", Value::from(vis)),
                    ("created", Value::Int(created)),
                ],
                Some(u),
            )?;
            posts.push((id.key, u, created));
        }
    }
    let post_pick = if posts.is_empty() {
        None
    } else {
        let w: Vec<f64> = posts.iter().map(|(_, u, _)| popularity[*u]).collect();
        Some(WeightedIndex::new(&w).map_err(|e| SynthError::Config(e.to_string()))?)
    };

    if let (Some(sh), Some(pick)) = (&p.photo, &post_pick) {
        for _ in 0..g.count(cfg.volumes.photos) {
            let (post, u, pc) = posts[pick.sample(&mut g.rng)];
            let created = g.created_after(pc);
            let video = g.rng.random_bool(cfg.video_rate);
            let size: i64 = if video {
                g.rng.random_range(20_000_000..200_000_000)
            } else {
                g.rng.random_range(20_000..4_000_000)
            };
            let ext = if video { "mp4" } else { "jpg" };
            let path = format!("media/{}.{ext}", g.rng.random::<u32>());
            g.insert(
                sh,
                vec![
                    ("owner", Value::Int(user_keys[u])),
                    ("post", Value::Int(post)),
                    ("path", Value::from(path)),
                    ("size", Value::Int(size)),
                    ("created", Value::Int(created)),
                ],
                Some(u),
            )?;
        }
    }

    for (shape, volume, is_like) in [
        (&p.comment, cfg.volumes.comments, false),
        (&p.like, cfg.volumes.likes, true),
    ] {
        let (Some(sh), Some(pick)) = (shape, &post_pick) else {
            continue;
        };
        for _ in 0..g.count(volume) {
            let (post, _, pc) = posts[pick.sample(&mut g.rng)];
            let u = by_pop.sample(&mut g.rng);
            let created = g.created_after(pc.max(user_created[u]));
            let mut values = vec![
                ("owner", Value::Int(user_keys[u])),
                ("post", Value::Int(post)),
                ("created", Value::Int(created)),
            ];
            if is_like {
                values.push(("positive", Value::Int(g.rng.random_bool(0.9) as i64)));
            } else {
                values.push(("text", Value::from(g.words(2, 15))));
            }
            g.insert(sh, values, Some(u))?;
        }
    }

    if let (Some(sh), Some(pick)) = (&p.notification, &post_pick) {
        const KINDS: [&str; 3] = ["liked", "commented", "mentioned"];
        for _ in 0..g.count(cfg.volumes.notifications) {
            let (post, u, pc) = posts[pick.sample(&mut g.rng)];
            let created = g.created_after(pc);
            let kind = KINDS[g.rng.random_range(0..KINDS.len())];
            g.insert(
                sh,
                vec![
                    ("owner", Value::Int(user_keys[u])),
                    ("post", Value::Int(post)),
                    ("kind", Value::from(kind)),
                    ("created", Value::Int(created)),
                ],
                Some(u),
            )?;
        }
    }

    // Conversations between friends, then messages inside them.
    let mut convs: Vec<(i64, usize, usize, i64)> = Vec::new();
    if let Some(sh) = &p.conversation {
        for &(a, b) in &g.out.friends.clone() {
            let whole = cfg.volumes.conversations.floor() as usize;
            let extra = g.rng.random_bool(cfg.volumes.conversations.fract()) as usize;
            for _ in 0..whole + extra {
                let (owner, peer) = if g.rng.random_bool(0.5) {
                    (a, b)
                } else {
                    (b, a)
                };
                let created = g.created_after(user_created[a].max(user_created[b]));
                let subject = g.words(1, 4);
                let id = g.insert(
                    sh,
                    vec![
                        ("owner", Value::Int(user_keys[owner])),
                        ("peer", Value::Int(user_keys[peer])),
                        ("subject", Value::from(subject)),
                        ("created", Value::Int(created)),
                    ],
                    Some(owner),
                )?;
                convs.push((id.key, owner, peer, created));
            }
        }
    }
    if let (Some(sh), false) = (&p.message, convs.is_empty()) {
        for _ in 0..g.count(cfg.volumes.messages) {
            let (conv, a, b, cc) = convs[g.rng.random_range(0..convs.len())];
            let u = if g.rng.random_bool(0.5) { a } else { b };
            let created = g.created_after(cc);
            let text = g.words(1, 25);
            g.insert(
                sh,
                vec![
                    ("owner", Value::Int(user_keys[u])),
                    ("conv", Value::Int(conv)),
                    ("text", Value::from(text)),
                    ("created", Value::Int(created)),
                ],
                Some(u),
            )?;
        }
    }

    if let Some(conv) = &p.conversation {
        for &(a, b) in &g.out.friends.clone() {
            if !g.rng.random_bool(cfg.grant_fraction) {
                continue;
            }
            for (from, to) in [(a, b), (b, a)] {
                meta.add_grant(SharingGrant {
                    grantor: g.out.users[from].clone(),
                    grantee: g.out.users[to].clone(),
                    selector: NodeSelector::Type {
                        node_type: Some(conv.node_type.to_owned()),
                        predicate: None,
                    },
                    allowed: [MigrationType::Deletion, MigrationType::Independent].into(),
                });
                g.out.grants += 1;
            }
        }
    }

    g.out.popularity = popularity;
    Ok(g.out)
}

/// Stable digest of a store's contents.
pub fn content_hash(store: &AppStore) -> String {
    let bytes = serde_json::to_vec(&store.snapshot()).expect("snapshots serialise");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
