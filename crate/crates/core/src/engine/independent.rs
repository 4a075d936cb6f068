//! Independent migrations: copy the user's data, leave the source intact
//! and mark what was copied. Nodes travel per type, parents first, in
//! batched transactions.

use std::collections::BTreeMap;

use super::node::{Placed, Run};
use super::{bags, Decision, Lane, BATCH_STAGES};
use crate::error::{EngineError, StoreError};
use crate::model::{MigrationType, NodeId};

pub(crate) fn run(run: &Run) -> Result<(), EngineError> {
    let root = run.ctx.user.clone();
    let mut lane = Lane::new(0, true);
    let candidates = run.candidates(&mut lane, &root);
    run.measure_source(&root, &candidates);
    let tracker = run.tracker();

    match tracker.live_identity(&root, &run.ctx.dst) {
        Some(existing) => run.validator.lock().set_user_root(existing),
        None => {
            let root_node = run
                .src
                .read(&root)
                .ok_or_else(|| StoreError::NotFound(root.to_string()))?;
            let refs = run.referents_src(&root_node);
            match run.migrate_node(&mut lane, root_node, refs, &run.ctx.mapping, true)? {
                Placed::Arrived { dst, touched } => {
                    let t = lane.flush(BATCH_STAGES);
                    run.timeline(&root, |e| e.arrived = Some(t));
                    run.announce(&dst, &touched, t)?;
                }
                Placed::Bagged => {
                    return Err(EngineError::Invalid(format!(
                        "mapping {} -> {} does not carry the user root",
                        run.ctx.src, run.ctx.dst
                    )))
                }
            }
        }
    }
    run.mark_migrated(&mut lane, &root)?;

    // Parents first, so most references resolve on arrival.
    let rank: BTreeMap<&str, usize> = run
        .src
        .dag()
        .topo_types()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut by_type: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for id in candidates {
        let Some(n) = run.src.read(&id) else { continue };
        lane.op(1, 0);
        match super::node::decide(
            run.world,
            &run.src,
            &n,
            &run.user,
            MigrationType::Independent,
        ) {
            Decision::Yes => {
                let r = rank
                    .get(id.node_type.as_str())
                    .copied()
                    .unwrap_or(usize::MAX);
                by_type.entry(r).or_default().push(id);
            }
            Decision::SkipNotShared => run.count(|c| {
                c.considered += 1;
                c.skipped_not_shared += 1;
            }),
            Decision::SkipWrongType => run.count(|c| {
                c.considered += 1;
                c.skipped_wrong_type += 1;
            }),
        }
    }

    for ids in by_type.values() {
        for batch in ids.chunks(run.ctx.batch_size.max(1)) {
            let mut arrived = Vec::new();
            for id in batch {
                let Some(node) = run.src.read(id) else {
                    continue;
                };
                run.count(|c| c.considered += 1);
                if node.flags.migrated && copied_before(run, &tracker, id) {
                    run.count(|c| c.already_migrated += 1);
                    continue;
                }
                let refs = run.referents_src(&node);
                if let Placed::Arrived { dst, touched } =
                    run.migrate_node(&mut lane, node, refs, &run.ctx.mapping, false)?
                {
                    run.count(|c| c.migrated += 1);
                    arrived.push((id.clone(), dst, touched));
                }
                run.mark_migrated(&mut lane, id)?;
            }
            let t = lane.flush(BATCH_STAGES);
            for (origin, dst, touched) in arrived {
                run.timeline(&origin, |e| e.arrived = Some(t));
                run.announce(&dst, &touched, t)?;
            }
        }
    }

    bags::run(run, &mut lane)?;
    run.close_lane(&lane);
    let walk_end = run.acc.lock().walk_end;
    run.finish_validation(walk_end)
}

/// An earlier copy of `id` is live at the destination or was bagged there.
fn copied_before(run: &Run, tracker: &crate::tracker::Tracker, id: &NodeId) -> bool {
    tracker.live_identity(id, &run.ctx.dst).is_some()
        || run
            .meta()
            .identity_class(id)
            .iter()
            .any(|m| m.app == run.ctx.dst && run.meta().bag_get(m).is_some())
}
