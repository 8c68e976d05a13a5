//! JSON-lines export of executions of C(k).
//!
//! Line 1 is a header with the instance and the initial configuration, then
//! one line per step with the activated nodes, their new states, the step
//! class and the sorted potentials after the step, then a closing line with
//! the outcome.

use std::io::{self, Write};

use serde::Serialize;

use crate::engine::{Configuration, ExecutionTrace, Outcome};
use crate::kcluster::{CkState, ClusterInstance};
use crate::order::MeasureTriple;
use crate::topology::NodeId;

pub const TRACE_SCHEMA: &str = "ckstab.trace.v1";

#[derive(Serialize)]
struct Header<'a> {
    schema: &'static str,
    n: usize,
    k: i64,
    root: NodeId,
    edges: Vec<(NodeId, NodeId)>,
    initial: &'a Configuration<CkState>,
    potentials: Option<MeasureTriple>,
}

#[derive(Serialize)]
struct Delta<'a> {
    node: NodeId,
    state: &'a CkState,
}

#[derive(Serialize)]
struct StepLine<'a> {
    step: usize,
    activated: &'a [NodeId],
    deltas: Vec<Delta<'a>>,
    class: crate::engine::StepClass,
    potentials: Option<MeasureTriple>,
}

#[derive(Serialize)]
struct Closing<'a> {
    outcome: &'a Outcome,
    steps: usize,
    last: &'a Configuration<CkState>,
}

/// Writes `trace` as JSON lines.
pub fn write_jsonl<W: Write>(inst: &ClusterInstance, trace: &ExecutionTrace<CkState>, mut out: W) -> io::Result<()> {
    line(
        &mut out,
        &Header {
            schema: TRACE_SCHEMA,
            n: inst.n(),
            k: inst.k(),
            root: inst.tree().root,
            edges: inst.net().edges(),
            initial: &trace.initial,
            potentials: inst.measure(&trace.initial).ok(),
        },
    )?;
    let mut g = trace.initial.clone();
    for (i, record) in trace.steps.iter().enumerate() {
        for (&p, s) in record.activated.iter().zip(&record.updates) {
            g.set(p, s.clone());
        }
        line(
            &mut out,
            &StepLine {
                step: i,
                activated: &record.activated,
                deltas: record
                    .activated
                    .iter()
                    .zip(&record.updates)
                    .map(|(&node, state)| Delta { node, state })
                    .collect(),
                class: record.class,
                potentials: inst.measure(&g).ok(),
            },
        )?;
    }
    line(&mut out, &Closing { outcome: &trace.outcome, steps: trace.steps.len(), last: &trace.last })
}

fn line<W: Write, T: Serialize>(out: &mut W, v: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    out.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::daemon::{Daemon, DaemonPolicy};
    use crate::engine::execute;
    use crate::kcluster::identity_ids;
    use crate::topology::{build_spanning_tree, generate, GraphKind};

    #[test]
    fn one_line_per_step_plus_two() {
        let net = generate(GraphKind::Path, 5, 0).unwrap();
        let tree = build_spanning_tree(&net, NodeId(4)).unwrap();
        let inst = ClusterInstance::new(net, tree, identity_ids(5), 1).unwrap();
        let mut daemon = Daemon::new(DaemonPolicy::Synchronous, 0);
        let trace = execute(inst.alg(), inst.net(), inst.zero_config(), &mut daemon, 100, &mut []).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&inst, &trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), trace.steps.len() + 2);
        assert_eq!(lines[0]["schema"], TRACE_SCHEMA);
        assert_eq!(lines[1]["step"], 0);
        assert!(lines[1]["potentials"]["alpha"].is_array());
        assert_eq!(lines.last().unwrap()["outcome"]["status"], "terminal");
        let final_pots = &lines[lines.len() - 2]["potentials"];
        assert_eq!(final_pots["headc"], serde_json::json!([0, 0, 0, 0, 0]));
    }
}
