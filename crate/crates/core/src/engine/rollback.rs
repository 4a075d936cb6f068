//! Undo of unfinished migrations from their write-ahead logs.

use crate::error::{EngineError, StoreError};
use crate::model::NodeId;
use crate::store::{AppStore, LeaseState, MigrationId, Outcome, PlaceholderLoc, WalOp, World};

fn store<'w>(world: &'w World, id: &NodeId) -> Result<&'w AppStore, EngineError> {
    world
        .app(&id.app)
        .map(|s| &**s)
        .ok_or_else(|| EngineError::UnknownApp(id.app.to_string()))
}

/// Reverts every logged mutation of migration `mid`, newest first, and
/// seals its log with an abort record. Each undo step checks the current
/// state first, so a record whose mutation never happened is harmless
/// and running rollback twice changes nothing.
pub fn rollback(world: &World, mid: MigrationId) -> Result<Outcome, EngineError> {
    let meta = world.meta();
    match meta.wal_terminal(mid) {
        Some(WalOp::Commit) => return Ok(Outcome::Committed),
        Some(_) => return Ok(Outcome::RolledBack),
        None => {}
    }
    for rec in meta.wal_scan(mid).into_iter().rev() {
        match rec.op {
            WalOp::CopyRoot { dst, .. } | WalOp::MigrateNode { dst, .. } => {
                let s = store(world, &dst)?;
                if s.contains(&dst) {
                    s.delete(&dst)?;
                }
            }
            WalOp::BagPut {
                origin, previous, ..
            } => {
                meta.bag_remove(&origin);
                if let Some(p) = previous {
                    meta.bag_restore(p);
                }
            }
            WalOp::BagTake { entry } => meta.bag_restore(entry),
            WalOp::DeleteNode { pre_image } => {
                let s = store(world, &pre_image.id)?;
                if !s.contains(&pre_image.id) {
                    s.insert(&pre_image)?;
                }
            }
            WalOp::DisplayNode { node, prev } | WalOp::MarkMigrated { node, prev } => {
                let s = store(world, &node)?;
                if s.contains(&node) {
                    s.set_flags(&node, None, prev)?;
                }
            }
            WalOp::Relink {
                node,
                attr,
                old,
                old_placeholder,
            } => {
                let s = store(world, &node)?;
                if s.contains(&node) {
                    match s.update_attr(&node, &attr, old) {
                        Ok(_) | Err(StoreError::NotFound(_)) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
                meta.placeholder_clear(&PlaceholderLoc {
                    app: node.app.clone(),
                    table: attr.table.clone(),
                    row: node.key,
                    attr: attr.attr.clone(),
                });
                if let Some(p) = old_placeholder {
                    meta.placeholder_set(p);
                }
            }
            WalOp::Commit | WalOp::Abort => {}
        }
    }
    meta.remove_tracker_rows(mid);
    meta.remove_display_events(mid);
    meta.release_claims(mid);
    meta.wal_append(mid, WalOp::Abort)?;
    if meta.lease(mid).is_some() {
        meta.finish_lease(mid, LeaseState::Aborted)?;
    }
    Ok(Outcome::RolledBack)
}

/// Rolls back every migration that never sealed its log, as after a
/// crash. Returns what happened to each.
pub fn recover(world: &World) -> Result<Vec<(MigrationId, Outcome)>, EngineError> {
    let mut out = Vec::new();
    for mid in world.meta().wal_unsealed() {
        out.push((mid, rollback(world, mid)?));
    }
    // Migrations that crashed before logging anything, or right after
    // their commit record.
    let meta = world.meta();
    for m in meta.migrations() {
        if m.outcome.is_some()
            || !meta
                .lease(m.id)
                .is_some_and(|l| l.state == LeaseState::Active)
        {
            continue;
        }
        if meta.wal_terminal(m.id) == Some(WalOp::Commit) {
            meta.release_claims(m.id);
            meta.finish_lease(m.id, LeaseState::Committed)?;
            out.push((m.id, Outcome::Committed));
        } else if meta.wal_scan(m.id).is_empty() {
            out.push((m.id, rollback(world, m.id)?));
        }
    }
    Ok(out)
}
