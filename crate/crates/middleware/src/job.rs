//! Job state for one case submission or edit.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    InProgress,
    Finished,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Finished | JobStatus::Failed)
    }

    /// Allowed moves: queued -> in_progress -> finished | failed.
    pub fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::InProgress)
                | (JobStatus::InProgress, JobStatus::Finished)
                | (JobStatus::InProgress, JobStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioStatus {
    Queued,
    Running,
    /// Result computed by this job.
    Finished,
    /// Result carried over unchanged from an earlier job.
    Reused,
    Failed,
}

impl ScenarioStatus {
    pub fn is_done(self) -> bool {
        matches!(
            self,
            ScenarioStatus::Finished | ScenarioStatus::Reused | ScenarioStatus::Failed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProgress {
    pub scenario: String,
    pub status: ScenarioStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// True when the coupling hit its iteration limit in some month.
    #[serde(default)]
    pub coupling_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub case_name: String,
    pub status: JobStatus,
    pub total: usize,
    /// Scenarios with a result available (computed or reused).
    pub completed: usize,
    pub failed: usize,
    /// Scenarios this job actually simulated.
    pub executed: usize,
    pub reused: usize,
    pub scenarios: Vec<ScenarioProgress>,
    pub submitted_at: DateTime<Utc>,
    #[serde(default)]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
}

impl JobRecord {
    pub fn new(case_name: &str, scenarios: &[String]) -> Self {
        JobRecord {
            case_name: case_name.to_string(),
            status: JobStatus::Queued,
            total: scenarios.len(),
            completed: 0,
            failed: 0,
            executed: 0,
            reused: 0,
            scenarios: scenarios
                .iter()
                .map(|s| ScenarioProgress {
                    scenario: s.clone(),
                    status: ScenarioStatus::Queued,
                    error: None,
                    coupling_warning: false,
                })
                .collect(),
            submitted_at: Utc::now(),
            started_at: None,
            finished_at: None,
        }
    }

    /// Moves to `next` if the transition is legal; returns whether it moved.
    pub fn transition(&mut self, next: JobStatus) -> bool {
        if !self.status.can_become(next) {
            return false;
        }
        self.status = next;
        match next {
            JobStatus::InProgress => self.started_at = Some(Utc::now()),
            JobStatus::Finished | JobStatus::Failed => self.finished_at = Some(Utc::now()),
            JobStatus::Queued => {}
        }
        true
    }

    pub fn progress_mut(&mut self, scenario: &str) -> Option<&mut ScenarioProgress> {
        self.scenarios.iter_mut().find(|p| p.scenario == scenario)
    }

    /// Recounts the summary fields and finishes the job once every scenario
    /// is done.
    pub fn refresh(&mut self) {
        let count = |st: ScenarioStatus| self.scenarios.iter().filter(|p| p.status == st).count();
        self.executed = count(ScenarioStatus::Finished);
        self.reused = count(ScenarioStatus::Reused);
        self.failed = count(ScenarioStatus::Failed);
        self.completed = self.executed + self.reused;
        if self.status == JobStatus::InProgress && self.scenarios.iter().all(|p| p.status.is_done()) {
            let next = if self.failed > 0 {
                JobStatus::Failed
            } else {
                JobStatus::Finished
            };
            self.transition(next);
        }
    }

    /// Scenario names still waiting for a result.
    pub fn pending(&self) -> Vec<String> {
        self.scenarios
            .iter()
            .filter(|p| !p.status.is_done())
            .map(|p| p.scenario.clone())
            .collect()
    }
}
