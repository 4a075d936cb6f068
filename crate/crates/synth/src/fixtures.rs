//! The four mini applications: schemas, DAG specifications and the
//! direct pairwise mappings between them, shipped as spec documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dagmig_core::error::SpecError;
use dagmig_core::model::{AppId, AttrRef, Dag};
use dagmig_core::psm::{derive_all, SchemaMapping};
use dagmig_core::specio::{load_dag_spec, load_mapping, load_schema, SpecDocument};

use crate::SynthError;

pub const DIASPORA: &str = "miniDiaspora";
pub const MASTODON: &str = "miniMastodon";
pub const TWITTER: &str = "miniTwitter";
pub const GNUSOCIAL: &str = "miniGnuSocial";

pub const APPS: [&str; 4] = [DIASPORA, MASTODON, TWITTER, GNUSOCIAL];

macro_rules! fixture {
    ($name:literal) => {
        ($name, include_str!(concat!("../fixtures/", $name)))
    };
}

const DOCUMENTS: &[(&str, &str)] = &[
    fixture!("miniDiaspora.schema.json"),
    fixture!("miniDiaspora.dag.json"),
    fixture!("miniMastodon.schema.json"),
    fixture!("miniMastodon.dag.json"),
    fixture!("miniTwitter.schema.json"),
    fixture!("miniTwitter.dag.json"),
    fixture!("miniGnuSocial.schema.json"),
    fixture!("miniGnuSocial.dag.json"),
    fixture!("miniDiaspora-miniMastodon.mapping.json"),
    fixture!("miniMastodon-miniDiaspora.mapping.json"),
    fixture!("miniDiaspora-miniTwitter.mapping.json"),
    fixture!("miniTwitter-miniGnuSocial.mapping.json"),
    fixture!("miniGnuSocial-miniTwitter.mapping.json"),
    fixture!("miniMastodon-miniGnuSocial.mapping.json"),
    fixture!("miniGnuSocial-miniDiaspora.mapping.json"),
];

/// Checked DAGs of a set of applications plus their direct mappings.
#[derive(Clone, Debug, Default)]
pub struct Fixtures {
    pub dags: BTreeMap<AppId, Arc<Dag>>,
    pub direct: Vec<SchemaMapping>,
}

impl Fixtures {
    /// The built-in mini applications.
    pub fn builtin() -> Result<Fixtures, SynthError> {
        let docs = DOCUMENTS
            .iter()
            .map(|(name, body)| (PathBuf::from(name), SpecDocument::inline(*body)));
        Self::from_documents(docs)
    }

    /// Every `*.schema.json`, `*.dag.json` and `*.mapping.json` in `dir`.
    /// A DAG file needs the schema file of the same application.
    pub fn load_dir(dir: &Path) -> Result<Fixtures, SynthError> {
        let mut docs = Vec::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| SynthError::Io(dir.to_owned(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for p in entries {
            let doc = SpecDocument::read(&p).map_err(|e| SynthError::Io(p.clone(), e))?;
            docs.push((p, doc));
        }
        Self::from_documents(docs)
    }

    fn from_documents(
        docs: impl IntoIterator<Item = (PathBuf, SpecDocument)>,
    ) -> Result<Fixtures, SynthError> {
        let mut schemas = BTreeMap::new();
        let mut dag_docs = BTreeMap::new();
        let mut mapping_docs = Vec::new();
        for (path, doc) in docs {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_owned();
            let at = |e: SpecError| SynthError::Spec(path.clone(), e);
            if let Some(app) = name.strip_suffix(".schema.json") {
                schemas.insert(AppId::from(app), load_schema(&doc).map_err(at)?);
            } else if let Some(app) = name.strip_suffix(".dag.json") {
                dag_docs.insert(AppId::from(app), (path.clone(), doc));
            } else if name.ends_with(".mapping.json") {
                mapping_docs.push((path.clone(), doc));
            }
        }
        let mut dags = BTreeMap::new();
        for (app, (path, doc)) in dag_docs {
            let schema = schemas
                .get(&app)
                .ok_or_else(|| SynthError::MissingSchema(app.clone()))?;
            let dag = load_dag_spec(&doc, schema).map_err(|e| SynthError::Spec(path, e))?;
            dags.insert(app, Arc::new(dag));
        }
        let mut direct = Vec::new();
        for (path, doc) in mapping_docs {
            let tree = doc.tree().map_err(|e| SynthError::Spec(path.clone(), e))?;
            let end = |k: &str| {
                tree.get(k)
                    .and_then(|v| v.as_str())
                    .map(AppId::from)
                    .ok_or_else(|| {
                        let e = SpecError::Invalid {
                            path: format!("/{k}"),
                            msg: "missing application name".into(),
                        };
                        SynthError::Spec(path.clone(), e)
                    })
            };
            let (from, to) = (end("from_app")?, end("to_app")?);
            let src = dags
                .get(&from)
                .ok_or_else(|| SynthError::MissingDag(from.clone()))?;
            let dst = dags
                .get(&to)
                .ok_or_else(|| SynthError::MissingDag(to.clone()))?;
            direct.push(load_mapping(&doc, src, dst).map_err(|e| SynthError::Spec(path, e))?);
        }
        direct.sort_by(|a, b| (&a.from_app, &a.to_app).cmp(&(&b.from_app, &b.to_app)));
        Ok(Fixtures { dags, direct })
    }

    pub fn dag(&self, app: &str) -> Option<&Arc<Dag>> {
        self.dags.get(&AppId::from(app))
    }

    pub fn direct_mapping(&self, from: &str, to: &str) -> Option<&SchemaMapping> {
        self.direct
            .iter()
            .find(|m| m.from_app.as_str() == from && m.to_app.as_str() == to)
    }

    /// One mapping per reachable ordered pair, direct or composed.
    pub fn derived(&self) -> Vec<SchemaMapping> {
        let dags: BTreeMap<AppId, Dag> = self
            .dags
            .iter()
            .map(|(k, v)| (k.clone(), (**v).clone()))
            .collect();
        derive_all(&self.direct, &dags)
    }
}

/// Where the generator writes each kind of entity in one application.
/// Attributes are `table.attr` strings; absent entities are `None`.
#[derive(Clone, Copy, Debug)]
pub struct Profile {
    pub app: &'static str,
    pub user: Shape,
    pub post: Option<Shape>,
    pub comment: Option<Shape>,
    pub like: Option<Shape>,
    pub conversation: Option<Shape>,
    pub message: Option<Shape>,
    pub photo: Option<Shape>,
    pub notification: Option<Shape>,
}

#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub node_type: &'static str,
    /// Role name to attribute, e.g. `("owner", "posts.author_id")`.
    pub fields: &'static [(&'static str, &'static str)],
}

impl Shape {
    pub fn attr(&self, role: &str) -> Option<AttrRef> {
        self.fields
            .iter()
            .find(|(r, _)| *r == role)
            .and_then(|(_, a)| a.parse().ok())
    }
}

const fn s(
    node_type: &'static str,
    fields: &'static [(&'static str, &'static str)],
) -> Option<Shape> {
    Some(Shape { node_type, fields })
}

pub const DIASPORA_PROFILE: Profile = Profile {
    app: DIASPORA,
    user: Shape {
        node_type: "person",
        fields: &[
            ("handle", "people.guid"),
            ("created", "people.created_at"),
            ("first", "profiles.first_name"),
            ("last", "profiles.last_name"),
            ("bio", "profiles.bio"),
        ],
    },
    post: s(
        "post",
        &[
            ("owner", "posts.author_id"),
            ("text", "posts.text"),
            ("vis", "posts.public"),
            ("created", "posts.created_at"),
        ],
    ),
    comment: s(
        "comment",
        &[
            ("owner", "comments.author_id"),
            ("post", "comments.post_id"),
            ("text", "comments.text"),
            ("created", "comments.created_at"),
        ],
    ),
    like: s(
        "like",
        &[
            ("owner", "likes.author_id"),
            ("post", "likes.target_id"),
            ("positive", "likes.positive"),
            ("created", "likes.created_at"),
        ],
    ),
    conversation: s(
        "conversation",
        &[
            ("owner", "conversations.author_id"),
            ("peer", "conversations.participant_id"),
            ("subject", "conversations.subject"),
            ("created", "conversations.created_at"),
        ],
    ),
    message: s(
        "message",
        &[
            ("owner", "messages.author_id"),
            ("conv", "messages.conversation_id"),
            ("text", "messages.text"),
            ("created", "messages.created_at"),
        ],
    ),
    photo: s(
        "photo",
        &[
            ("owner", "photos.author_id"),
            ("post", "photos.status_message_id"),
            ("path", "photos.remote_path"),
            ("size", "photos.size_bytes"),
            ("created", "photos.created_at"),
        ],
    ),
    notification: s(
        "notification",
        &[
            ("owner", "notifications.recipient_id"),
            ("post", "notifications.target_id"),
            ("kind", "notifications.kind"),
            ("created", "notifications.created_at"),
        ],
    ),
};

pub const MASTODON_PROFILE: Profile = Profile {
    app: MASTODON,
    user: Shape {
        node_type: "account",
        fields: &[
            ("handle", "accounts.username"),
            ("first", "accounts.display_name"),
            ("last", "accounts.surname"),
            ("bio", "accounts.note"),
            ("created", "accounts.created_at"),
        ],
    },
    post: s(
        "status",
        &[
            ("owner", "statuses.account_id"),
            ("text", "statuses.text"),
            ("vis", "statuses.visibility"),
            ("created", "statuses.created_at"),
        ],
    ),
    comment: s(
        "reply",
        &[
            ("owner", "replies.account_id"),
            ("post", "replies.status_id"),
            ("text", "replies.text"),
            ("created", "replies.created_at"),
        ],
    ),
    like: s(
        "favourite",
        &[
            ("owner", "favourites.account_id"),
            ("post", "favourites.status_id"),
            ("created", "favourites.created_at"),
        ],
    ),
    conversation: s(
        "conversation",
        &[
            ("owner", "conversations.account_id"),
            ("peer", "conversations.recipient_id"),
            ("subject", "conversations.topic"),
            ("created", "conversations.created_at"),
        ],
    ),
    message: s(
        "direct",
        &[
            ("owner", "direct_messages.account_id"),
            ("conv", "direct_messages.conversation_id"),
            ("text", "direct_messages.text"),
            ("created", "direct_messages.created_at"),
        ],
    ),
    photo: s(
        "media",
        &[
            ("owner", "media_attachments.account_id"),
            ("post", "media_attachments.status_id"),
            ("path", "media_attachments.file_path"),
            ("size", "media_attachments.file_size"),
            ("created", "media_attachments.created_at"),
        ],
    ),
    notification: s(
        "notification",
        &[
            ("owner", "notifications.account_id"),
            ("post", "notifications.status_id"),
            ("kind", "notifications.kind"),
            ("created", "notifications.created_at"),
        ],
    ),
};

pub const TWITTER_PROFILE: Profile = Profile {
    app: TWITTER,
    user: Shape {
        node_type: "user",
        fields: &[
            ("handle", "users.handle"),
            ("first", "users.name"),
            ("last", "users.surname"),
            ("bio", "users.bio"),
            ("created", "users.created_at"),
        ],
    },
    post: s(
        "tweet",
        &[
            ("owner", "tweets.user_id"),
            ("text", "tweets.body"),
            ("created", "tweets.created_at"),
        ],
    ),
    comment: s(
        "reply",
        &[
            ("owner", "replies.user_id"),
            ("post", "replies.tweet_id"),
            ("text", "replies.body"),
            ("created", "replies.created_at"),
        ],
    ),
    like: s(
        "like",
        &[
            ("owner", "likes.user_id"),
            ("post", "likes.tweet_id"),
            ("created", "likes.created_at"),
        ],
    ),
    conversation: s(
        "thread",
        &[
            ("owner", "threads.user_id"),
            ("peer", "threads.peer_id"),
            ("subject", "threads.title"),
            ("created", "threads.created_at"),
        ],
    ),
    message: s(
        "dm",
        &[
            ("owner", "dms.user_id"),
            ("conv", "dms.thread_id"),
            ("text", "dms.body"),
            ("created", "dms.created_at"),
        ],
    ),
    photo: s(
        "media",
        &[
            ("owner", "media.user_id"),
            ("post", "media.tweet_id"),
            ("path", "media.url"),
            ("size", "media.bytes"),
            ("created", "media.created_at"),
        ],
    ),
    notification: None,
};

pub const GNUSOCIAL_PROFILE: Profile = Profile {
    app: GNUSOCIAL,
    user: Shape {
        node_type: "profile",
        fields: &[
            ("handle", "profiles.nickname"),
            ("first", "profiles.fullname"),
            ("last", "profiles.lastname"),
            ("bio", "profiles.bio"),
            ("created", "profiles.created"),
        ],
    },
    post: s(
        "notice",
        &[
            ("owner", "notices.profile_id"),
            ("text", "notices.content"),
            ("created", "notices.created"),
        ],
    ),
    comment: s(
        "reply",
        &[
            ("owner", "notice_replies.profile_id"),
            ("post", "notice_replies.notice_id"),
            ("text", "notice_replies.content"),
            ("created", "notice_replies.created"),
        ],
    ),
    like: s(
        "fave",
        &[
            ("owner", "faves.profile_id"),
            ("post", "faves.notice_id"),
            ("created", "faves.created"),
        ],
    ),
    conversation: s(
        "conversation",
        &[
            ("owner", "conversations.profile_id"),
            ("peer", "conversations.peer_id"),
            ("subject", "conversations.title"),
            ("created", "conversations.created"),
        ],
    ),
    message: s(
        "message",
        &[
            ("owner", "messages.profile_id"),
            ("conv", "messages.conversation_id"),
            ("text", "messages.content"),
            ("created", "messages.created"),
        ],
    ),
    photo: s(
        "attachment",
        &[
            ("owner", "attachments.profile_id"),
            ("post", "attachments.notice_id"),
            ("path", "attachments.filename"),
            ("size", "attachments.filesize"),
            ("created", "attachments.created"),
        ],
    ),
    notification: s(
        "notification",
        &[
            ("owner", "notifications.profile_id"),
            ("post", "notifications.notice_id"),
            ("kind", "notifications.kind"),
            ("created", "notifications.created"),
        ],
    ),
};

pub fn profile(app: &str) -> Option<&'static Profile> {
    [
        &DIASPORA_PROFILE,
        &MASTODON_PROFILE,
        &TWITTER_PROFILE,
        &GNUSOCIAL_PROFILE,
    ]
    .into_iter()
    .find(|p| p.app == app)
}
