//! Service interfaces. Each has an in-process implementation and a TCP client in `rpc`,
//! so workers are written once against these traits.

use std::sync::Arc;

use crate::env::Outcome;
use crate::error::Result;
use crate::league::Task;
use crate::model_pool::{ModelInfo, ModelRecord};
use crate::policy::ActionDistribution;
use crate::segment::TrajectorySegment;

pub trait ModelPoolApi: Send + Sync {
    fn put_model(&self, record: ModelRecord) -> Result<()>;
    fn get_model(&self, key: &str) -> Result<Arc<ModelRecord>>;
    fn freeze_model(&self, key: &str) -> Result<()>;
    fn list_models(&self) -> Result<Vec<ModelInfo>>;
}

pub trait LeagueApi: Send + Sync {
    fn request_actor_task(&self, actor_id: u32, group: u32) -> Result<Task>;
    /// `outcomes` are in slot order; slot 0 is the learning agent.
    fn report_outcome(&self, task_id: u64, outcomes: &[Outcome]) -> Result<()>;
    fn request_learner_task(&self, group: u32, rank: u32) -> Result<Task>;
    /// Freezes the group's current model and returns the task for its successor.
    fn end_learning_period(&self, group: u32) -> Result<Task>;
}

pub trait SegmentSink: Send + Sync {
    fn push_segment(&self, segment: TrajectorySegment) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub dist: ActionDistribution,
    pub model_version: u64,
    pub value: f64,
}

pub trait InferenceApi: Send + Sync {
    fn infer(&self, actor_id: u32, obs: &[f64]) -> Result<InferenceResult>;
}

impl<T: ModelPoolApi + ?Sized> ModelPoolApi for Arc<T> {
    fn put_model(&self, record: ModelRecord) -> Result<()> {
        (**self).put_model(record)
    }
    fn get_model(&self, key: &str) -> Result<Arc<ModelRecord>> {
        (**self).get_model(key)
    }
    fn freeze_model(&self, key: &str) -> Result<()> {
        (**self).freeze_model(key)
    }
    fn list_models(&self) -> Result<Vec<ModelInfo>> {
        (**self).list_models()
    }
}
