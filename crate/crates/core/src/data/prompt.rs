use super::Task;
use crate::error::{Error, Result};

pub const SALIENT_PROMPT: &str = "the most salient object";
const CATEGORY_TEMPLATE: &str = "all {}";
const SLOT: &str = "{}";

/// Caption template for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTemplate {
    /// The caption is used as-is.
    Verbatim,
    /// Fixed text with no slot.
    Fixed(&'static str),
    /// Text with exactly one `{}` slot.
    Slotted(&'static str),
}

impl PromptTemplate {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Ris | Task::Rvos => PromptTemplate::Verbatim,
            Task::Sod => PromptTemplate::Fixed(SALIENT_PROMPT),
            Task::Ss | Task::Ovs | Task::Ps => PromptTemplate::Slotted(CATEGORY_TEMPLATE),
        }
    }

    pub fn slot_count(self) -> usize {
        match self {
            PromptTemplate::Verbatim => 0,
            PromptTemplate::Fixed(t) | PromptTemplate::Slotted(t) => t.matches(SLOT).count(),
        }
    }
}

/// Renders the caption that asks the model for `task`'s target.
///
/// Category names are slotted in verbatim; multi-word names are not
/// pluralized or otherwise rewritten.
pub fn render_prompt(task: Task, payload: Option<&str>) -> Result<String> {
    match (PromptTemplate::for_task(task), payload) {
        (PromptTemplate::Fixed(_), Some(_)) => Err(Error::UnexpectedPayload {
            task: task.as_str(),
        }),
        (PromptTemplate::Fixed(text), None) => Ok(text.to_string()),
        (_, None) => Err(Error::MissingPayload {
            task: task.as_str(),
        }),
        (_, Some(p)) if p.trim().is_empty() => Err(Error::MissingPayload {
            task: task.as_str(),
        }),
        (PromptTemplate::Verbatim, Some(p)) => Ok(p.to_string()),
        (PromptTemplate::Slotted(t), Some(p)) => Ok(t.replacen(SLOT, p, 1)),
    }
}
