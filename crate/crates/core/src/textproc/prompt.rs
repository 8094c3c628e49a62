//! Prompt template for candidate-thought generation.
//!
//! Rendered prompts have two parts: a fixed system message and a user message
//! laid out as a task block, optional in-context examples as Query/Response
//! pairs, and the target query with a trailing `Response:` cue.

use crate::error::{CoreError, Result};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful assistant. Your answer should follow \
the task description. Do not ask the user for further clarification. Don't repeat the query, \
just give the response.";

pub const DEFAULT_INSTRUCTION: &str = "Think about a plausible response to address the query";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub instruction: String,
    /// Number of in-context examples the user message must carry.
    pub m: usize,
}

impl PromptTemplate {
    pub fn new(m: usize) -> Self {
        PromptTemplate {
            system: DEFAULT_SYSTEM_PROMPT.to_string(),
            instruction: DEFAULT_INSTRUCTION.to_string(),
            m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptExample {
    pub query: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

/// Renders the system and user texts. The example count must equal the
/// template's `m`.
pub fn render_prompt(
    template: &PromptTemplate,
    examples: &[PromptExample],
    query: &str,
) -> Result<RenderedPrompt> {
    if examples.len() != template.m {
        return Err(CoreError::ExampleCountMismatch {
            expected: template.m,
            got: examples.len(),
        });
    }

    let mut user = String::new();
    user.push_str("Task:\n");
    user.push_str(&template.instruction);
    user.push('\n');
    if !examples.is_empty() {
        user.push_str("\nExamples:\n");
        for ex in examples {
            user.push_str("Query: ");
            user.push_str(&ex.query);
            user.push('\n');
            user.push_str("Response: ");
            user.push_str(&ex.response);
            user.push('\n');
        }
    }
    user.push_str("\nQuery:\n");
    user.push_str(query);
    user.push_str("\nResponse:");

    Ok(RenderedPrompt { system: template.system.clone(), user })
}
