//! Prompt templates for the planner, observer and answerer.
//!
//! Templates live in `templates/*.txt` and are rendered by a single left to
//! right pass over `{name}` placeholders, so substituted values are never
//! re-expanded.

use std::sync::LazyLock;

use regex::Regex;

pub const PLANNER_SYSTEM: &str = include_str!("../../templates/planner_system.txt");
pub const PLANNER_USER: &str = include_str!("../../templates/planner_user.txt");
pub const OBSERVER_SYSTEM: &str = include_str!("../../templates/observer_system.txt");
pub const OBSERVER_USER: &str = include_str!("../../templates/observer_user.txt");
pub const ANSWER_SYSTEM: &str = include_str!("../../templates/answer_system.txt");
pub const ANSWER_USER: &str = include_str!("../../templates/answer_user.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

/// Substitutes known placeholders; unknown `{...}` spans are left verbatim.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());
    PLACEHOLDER
        .replace_all(template, |c: &regex::Captures| {
            values
                .iter()
                .find(|(k, _)| *k == &c[1])
                .map_or_else(|| c[0].to_string(), |(_, v)| v.to_string())
        })
        .into_owned()
}

/// Question text followed by lettered option lines.
pub fn format_query(question: &str, options: &[String]) -> String {
    let mut out = question.trim().to_string();
    for (letter, option) in super::option_letters(options.len()).iter().zip(options) {
        out.push('\n');
        out.push_str(&format!("{letter}. {}", option.trim()));
    }
    out
}

/// `"incorrect"` for negated questions ("which is NOT ..."), otherwise `"correct"`.
pub fn answer_criteria(question: &str) -> &'static str {
    static NEGATED: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?i)\b(not|incorrect|false|except)\b").unwrap());
    if NEGATED.is_match(question) {
        "incorrect"
    } else {
        "correct"
    }
}

pub fn planner_prompt(query: &str) -> Prompt {
    Prompt {
        system: PLANNER_SYSTEM.to_string(),
        user: render(PLANNER_USER, &[("query", query)]),
    }
}

pub fn observer_prompt(query: &str, focus_keywords: &[String], focus_semantic_queries: &[String]) -> Prompt {
    Prompt {
        system: OBSERVER_SYSTEM.to_string(),
        user: render(
            OBSERVER_USER,
            &[
                ("query", query),
                ("focus_keywords", &focus_keywords.join(", ")),
                ("focus_semantic_queries", &focus_semantic_queries.join("; ")),
            ],
        ),
    }
}

pub fn answer_prompt(question: &str, query: &str, frame_info: &str) -> Prompt {
    Prompt {
        system: render(ANSWER_SYSTEM, &[("criteria", answer_criteria(question))]),
        user: render(ANSWER_USER, &[("frame_info_str", frame_info), ("query", query)]),
    }
}
