#![allow(dead_code)]

use captok_harness::{Fault, FaultKind, JobSpec, RunSettings, WorkflowRun};

pub fn job(id: &str, node: &str, duration: i64) -> JobSpec {
    JobSpec {
        id: id.to_owned(),
        inputs: "read:/ligo/frames/h1.gwf read:/ligo/frames/l1.gwf".parse().unwrap(),
        outputs: "write:/results/ligo".parse().unwrap(),
        execute: Some("read:/ligo/calibration.txt".parse().unwrap()),
        duration,
        node: node.to_owned(),
    }
}

/// `n` identical jobs spread over ten execute nodes.
pub fn uniform(n: usize, duration: i64) -> WorkflowRun {
    WorkflowRun {
        jobs: (0..n)
            .map(|i| job(&format!("job-{i:05}"), &format!("node-{}", i % 10), duration))
            .collect(),
        clock: Default::default(),
        faults: Vec::new(),
        settings: RunSettings::default(),
    }
}

pub fn fault(job: &str, kind: FaultKind) -> Fault {
    Fault {
        job: job.to_owned(),
        kind,
    }
}
