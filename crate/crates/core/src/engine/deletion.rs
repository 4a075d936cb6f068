//! Deletion migrations: copy the root, move every node after its
//! dependents, delete the source root last.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;

use super::node::{Placed, Run};
use super::{bags, Decision, Lane};
use crate::error::{EngineError, StoreError};
use crate::model::{deletion_order, InstanceGraph, MigrationType, NodeId, OrderStep};

pub(crate) fn run(run: &Run) -> Result<(), EngineError> {
    let root = run.ctx.user.clone();
    let mut lane = Lane::new(0, false);
    let candidates = run.candidates(&mut lane, &root);
    run.measure_source(&root, &candidates);

    let mut mine = BTreeSet::new();
    for id in &candidates {
        let Some(n) = run.src.read(id) else { continue };
        let d = super::node::decide(run.world, &run.src, &n, &run.user, MigrationType::Deletion);
        lane.op(1, 0);
        match d {
            Decision::Yes => {
                if run.meta().claim(id, run.mid) {
                    mine.insert(id.clone());
                }
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
    let order = deletion_order(&*run.src, &root, &mine)?;

    let root_node = run
        .src
        .read(&root)
        .ok_or_else(|| StoreError::NotFound(root.to_string()))?;
    let refs = run.referents_src(&root_node);
    match run.migrate_node(&mut lane, root_node, refs, &run.ctx.mapping, true)? {
        Placed::Arrived { dst, touched } => run.announce(&dst, &touched, lane.now())?,
        Placed::Bagged => {
            return Err(EngineError::Invalid(format!(
                "mapping {} -> {} does not carry the user root",
                run.ctx.src, run.ctx.dst
            )))
        }
    }

    let steps: Vec<NodeId> = order
        .iter()
        .filter_map(|s| match s {
            OrderStep::Migrate(n) => Some(n.clone()),
            _ => None,
        })
        .collect();
    // Nodes each step must wait for: the nearest of the user's own nodes
    // below it, looking through other people's nodes in between, which
    // the step may bag as dangling.
    let waits: HashMap<NodeId, Vec<NodeId>> = steps
        .iter()
        .map(|n| {
            let mut found = BTreeSet::new();
            let mut seen = BTreeSet::new();
            let mut queue = run.src.dependents(n);
            while let Some(d) = queue.pop() {
                if !seen.insert(d.clone()) {
                    continue;
                }
                if mine.contains(&d) {
                    found.insert(d);
                } else {
                    queue.extend(run.src.dependents(&d));
                }
            }
            (n.clone(), found.into_iter().collect())
        })
        .collect();

    let start = lane.now();
    run.close_lane(&lane);
    let next = AtomicUsize::new(0);
    let dangling = Mutex::new(());
    std::thread::scope(|s| {
        for _ in 0..run.ctx.workers.min(steps.len()).max(1) {
            s.spawn(|| {
                let mut lane = Lane::new(start, false);
                loop {
                    if run.txn.halted() {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(n) = steps.get(i) else { break };
                    if !wait_for(run, &mut lane, &waits[n]) {
                        break;
                    }
                    if let Err(e) = step(run, &mut lane, n, &dangling) {
                        run.fail(e);
                        break;
                    }
                    run.acc.lock().done_at.insert(n.clone(), lane.now());
                    run.meta().mark_done(n);
                }
                run.close_lane(&lane);
            });
        }
    });
    if let Some(e) = run.take_error() {
        return Err(e);
    }

    // Source root goes last, with whatever would dangle without it.
    let mut lane = Lane::new(run.acc.lock().walk_end, false);
    let doomed = run.doomed(&mut lane, std::slice::from_ref(&root));
    for d in doomed {
        run.bag_dangling(&mut lane, &d)?;
    }
    let t = run.delete(&mut lane, &run.src, &root)?;
    run.timeline(&root, |e| e.source_invisible = Some(t));

    bags::run(run, &mut lane)?;
    run.close_lane(&lane);
    let walk_end = run.acc.lock().walk_end;
    run.finish_validation(walk_end)
}

/// Blocks until the given nodes are settled, then moves the lane past
/// the time they finished. False when the migration halted meanwhile.
fn wait_for(run: &Run, lane: &mut Lane, deps: &[NodeId]) -> bool {
    for d in deps {
        while !run.meta().settled(d) {
            if run.txn.halted() {
                return false;
            }
            std::thread::yield_now();
        }
        if let Some(t) = run.acc.lock().done_at.get(d) {
            lane.catch_up(*t);
        }
    }
    true
}

/// Moves one source node and removes it, bagging whatever it would
/// leave dangling.
fn step(run: &Run, lane: &mut Lane, n: &NodeId, dangling: &Mutex<()>) -> Result<(), EngineError> {
    let Some(node) = run.src.read(n) else {
        return Ok(());
    };
    let refs = run.referents_src(&node);
    match run.migrate_node(lane, node, refs, &run.ctx.mapping, false)? {
        Placed::Arrived { dst, touched } => {
            run.count(|c| c.migrated += 1);
            run.announce(&dst, &touched, lane.now())?;
        }
        Placed::Bagged => {}
    }
    {
        let _g = dangling.lock();
        for d in run.doomed(lane, std::slice::from_ref(n)) {
            run.bag_dangling(lane, &d)?;
        }
    }
    let t = run.delete(lane, &run.src, n)?;
    run.timeline(n, |e| e.source_invisible = Some(t));
    run.count(|c| {
        c.considered += 1;
        c.deleted += 1;
    });
    Ok(())
}
