//! Moves the migrating user's bagged data into the destination once the
//! walk is over.

use std::collections::BTreeMap;

use super::node::{Placed, Run};
use super::Lane;
use crate::error::EngineError;

pub(crate) fn run(run: &Run, lane: &mut Lane) -> Result<(), EngineError> {
    let meta = run.meta();
    let tracker = run.tracker();
    let mut entries = meta.bag_list(&run.user);
    lane.op(entries.len() as u64 + 1, 0);
    entries.retain(|e| !e.partial && e.migration_id != run.mid);

    // Parents before children within each origin app.
    let rank = |app: &crate::model::AppId, ty: &str| -> usize {
        run.world
            .app(app)
            .and_then(|s| s.dag().topo_types().iter().position(|t| t == ty))
            .unwrap_or(usize::MAX)
    };
    let ranks: BTreeMap<_, _> = entries
        .iter()
        .map(|e| (e.origin.clone(), rank(&e.origin.app, &e.origin.node_type)))
        .collect();
    entries.sort_by(|a, b| (ranks[&a.origin], &a.origin).cmp(&(ranks[&b.origin], &b.origin)));

    for e in entries {
        let Some(mapping) = run.mapping_for(&e.origin.app) else {
            continue;
        };
        if mapping.node_map(&e.origin.node_type).is_none() {
            continue;
        }
        // The object is already there; the entry stays for a later merge.
        if tracker.live_identity(&e.origin, &run.ctx.dst).is_some() {
            continue;
        }
        run.take_bag(lane, &e)?;
        let refs = run.bag_refs(&e);
        let origin = e.origin.clone();
        if let Placed::Arrived { dst, touched } =
            run.migrate_node(lane, e.as_node(), refs, mapping, false)?
        {
            let t = lane.commit();
            run.timeline(&origin, |x| {
                x.from_bag = true;
                x.arrived = Some(t);
            });
            run.count(|c| c.from_bags += 1);
            run.announce(&dst, &touched, t)?;
        }
    }
    Ok(())
}
