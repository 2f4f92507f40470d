use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Human => "human",
            Role::Assistant => "assistant",
        }
    }

    /// Speaker tag used when a conversation is flattened into a prompt.
    pub fn speaker(self) -> &'static str {
        match self {
            Role::Human => "用户",
            Role::Assistant => "助手",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn human(text: impl Into<String>) -> Self {
        Message { role: Role::Human, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Message { role: Role::Assistant, text: text.into() }
    }
}

/// Roles alternate starting with a human turn.
pub fn alternates(messages: &[Message]) -> bool {
    messages.iter().enumerate().all(|(i, m)| {
        m.role == if i % 2 == 0 { Role::Human } else { Role::Assistant }
    })
}
