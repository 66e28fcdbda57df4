//! Independent replications on scoped threads.

use std::thread;

use renege_core::simulator::{self, SimConfig, SimEstimate, TraceEvent};

/// Runs `replications` copies of `base` with seeds `base.seed + r` and
/// merges them in seed order.
pub fn run_replications(base: &SimConfig, replications: usize) -> renege_core::Result<SimEstimate> {
    let results: Vec<renege_core::Result<SimEstimate>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..replications.max(1))
            .map(|r| {
                let mut cfg = base.clone();
                cfg.seed = base.seed.wrapping_add(r as u64);
                scope.spawn(move || simulator::run(&cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("replication thread panicked")).collect()
    });
    let mut iter = results.into_iter();
    let mut merged = iter.next().expect("at least one replication")?;
    for est in iter {
        merged.merge(&est?);
    }
    Ok(merged)
}

/// One replication whose events are formatted as CSV lines, at most `cap`.
pub fn trace_lines(cfg: &SimConfig, cap: usize) -> renege_core::Result<Vec<String>> {
    let mut lines = vec!["time,event,id,detail".to_string()];
    simulator::run_traced(cfg, &mut |e| {
        if lines.len() > cap {
            return;
        }
        lines.push(match e {
            TraceEvent::Arrival { time, id, found, joined } => {
                format!("{time},arrival,{id},found={found} joined={joined}")
            }
            TraceEvent::ServiceStart { time, id, .. } => format!("{time},service_start,{id},"),
            TraceEvent::Completion { time, id } => format!("{time},completion,{id},"),
            TraceEvent::Departure { time, id, cause, .. } => format!("{time},departure,{id},{cause:?}"),
        });
    })?;
    Ok(lines)
}
