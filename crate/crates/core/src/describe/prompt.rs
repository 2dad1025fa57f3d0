use serde::{Deserialize, Serialize};

use crate::digest::sha256_parts;
use crate::pairing::{Unit, UnitKind};

pub const SYSTEM_PROMPT: &str = "You will be provided with two frames from a video and asked to describe what objects that are indicated by bounding boxes in the video are doing.  Your task is to answer the query in a simple sentence.  If there is any interaction between the indicated objects, a description of the interaction should be given.";

const TIME_NOTE: &str = "The two images were taken one second apart.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_prompt: String,
    pub user_prompt: String,
}

impl PromptBundle {
    /// Content hash binding a description to the exact prompt bytes.
    pub fn hash(&self) -> String {
        sha256_parts([self.system_prompt.as_bytes(), self.user_prompt.as_bytes()])
    }
}

/// User prompt for a pair or single unit, with the class label filled in.
///
/// Same-class pairs use the plural (`persons`); mixed pairs read
/// `person and car`.
pub fn build_prompt(unit: &Unit) -> PromptBundle {
    let user_prompt = match unit.kind {
        UnitKind::Pair => {
            let a = &unit.class_labels[0];
            let b = &unit.class_labels[1];
            let names = if a == b {
                format!("{a}s")
            } else {
                format!("{a} and {b}")
            };
            format!(
                "Briefly describe what the {names} in the enclosed regions of these images are doing. {TIME_NOTE}"
            )
        }
        UnitKind::Single => format!(
            "Briefly describe what the {} in the enclosed region of these images is doing. {TIME_NOTE}",
            unit.class_labels[0]
        ),
    };
    PromptBundle {
        system_prompt: SYSTEM_PROMPT.to_string(),
        user_prompt,
    }
}
