//! Agent profile files and the registry that loads them.
//!
//! A profile is a plain-text file: a `key: value` header block up to the
//! first blank line, then the agent's system prompt verbatim. Example:
//!
//! ```text
//! name: backend-architect
//! description: API design and database work
//! model: sonnet
//! tools: Read, Write, Edit, Bash
//!
//! You are a senior backend architect...
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Capability class of the model an agent runs on. Profiles may name the
/// class directly (`fast`, `balanced`, `powerful`) or use a vendor-style
/// alias (`haiku`, `sonnet`, `opus`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelClass {
    Fast,
    #[default]
    Balanced,
    Powerful,
}

impl ModelClass {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "fast" | "haiku" => Some(Self::Fast),
            "balanced" | "sonnet" => Some(Self::Balanced),
            "powerful" | "opus" => Some(Self::Powerful),
            _ => None,
        }
    }

    pub fn canonical_name(self) -> &'static str {
        match self {
            Self::Fast => "fast",
            Self::Balanced => "balanced",
            Self::Powerful => "powerful",
        }
    }
}

impl fmt::Display for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

/// Tools an agent may be granted. The orchestrator refuses calls to tools
/// outside the profile's set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolKind {
    Read,
    Write,
    Edit,
    Bash,
    Grep,
    Glob,
}

impl ToolKind {
    pub const ALL: [ToolKind; 6] = [
        ToolKind::Read,
        ToolKind::Write,
        ToolKind::Edit,
        ToolKind::Bash,
        ToolKind::Grep,
        ToolKind::Glob,
    ];

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "Read" => Some(Self::Read),
            "Write" => Some(Self::Write),
            "Edit" => Some(Self::Edit),
            "Bash" => Some(Self::Bash),
            "Grep" => Some(Self::Grep),
            "Glob" => Some(Self::Glob),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Read => "Read",
            Self::Write => "Write",
            Self::Edit => "Edit",
            Self::Bash => "Bash",
            Self::Grep => "Grep",
            Self::Glob => "Glob",
        }
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub name: String,
    pub description: String,
    pub model: ModelClass,
    /// Granted tools in declaration order, first occurrence kept on repeats.
    pub tools: Vec<ToolKind>,
    pub system_prompt: String,
}

impl AgentProfile {
    pub fn allows(&self, tool: ToolKind) -> bool {
        self.tools.contains(&tool)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("profile is missing required header field `{0}`")]
    MissingField(&'static str),
    #[error("unknown header key `{0}`")]
    UnknownHeaderKey(String),
    #[error("profile has an empty system prompt")]
    EmptyPrompt,
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("unknown model `{0}` (expected fast/balanced/powerful or haiku/sonnet/opus)")]
    UnknownModel(String),
    #[error("invalid agent name `{0}` (use lowercase letters, digits, `-`, `_`)")]
    InvalidName(String),
    #[error("agent name `{name}` defined in both {first} and {second}")]
    DuplicateAgentName { name: String, first: String, second: String },
    #[error("no agent named `{name}` (known: {})", known.join(", "))]
    NotFound { name: String, known: Vec<String> },
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<RegistryError>,
    },
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
}

/// Parse one profile file. Header keys are exactly `name`, `description`,
/// `model` (optional, defaults to `balanced`), and `tools`; anything else is
/// rejected rather than silently carried along. CRLF input is accepted.
pub fn parse_profile(text: &str) -> Result<AgentProfile, RegistryError> {
    let text = text.replace("\r\n", "\n");
    let mut name = None;
    let mut description = None;
    let mut model = None;
    let mut tools: Option<Vec<ToolKind>> = None;

    let mut lines = text.lines();
    for line in lines.by_ref() {
        if line.trim().is_empty() {
            break;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| RegistryError::UnknownHeaderKey(line.trim().to_string()))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "name" => {
                if !valid_name(value) {
                    return Err(RegistryError::InvalidName(value.to_string()));
                }
                name = Some(value.to_string());
            }
            "description" => description = Some(value.to_string()),
            "model" => {
                model = Some(
                    ModelClass::parse(value)
                        .ok_or_else(|| RegistryError::UnknownModel(value.to_string()))?,
                );
            }
            "tools" => {
                let mut parsed = Vec::new();
                for token in value.split(',') {
                    let token = token.trim();
                    if token.is_empty() {
                        continue;
                    }
                    let tool = ToolKind::parse(token)
                        .ok_or_else(|| RegistryError::UnknownTool(token.to_string()))?;
                    if !parsed.contains(&tool) {
                        parsed.push(tool);
                    }
                }
                tools = Some(parsed);
            }
            other => return Err(RegistryError::UnknownHeaderKey(other.to_string())),
        }
    }

    let system_prompt: String = lines.collect::<Vec<_>>().join("\n");
    if system_prompt.trim().is_empty() {
        return Err(RegistryError::EmptyPrompt);
    }

    Ok(AgentProfile {
        name: name.ok_or(RegistryError::MissingField("name"))?,
        description: description.ok_or(RegistryError::MissingField("description"))?,
        model: model.unwrap_or_default(),
        tools: tools.ok_or(RegistryError::MissingField("tools"))?,
        system_prompt,
    })
}

/// Render a profile back to file form. `parse_profile(&serialize_profile(p))`
/// reproduces `p` with the model written under its canonical name.
pub fn serialize_profile(profile: &AgentProfile) -> String {
    let tools: Vec<&str> = profile.tools.iter().map(|t| t.name()).collect();
    format!(
        "name: {}\ndescription: {}\nmodel: {}\ntools: {}\n\n{}",
        profile.name,
        profile.description,
        profile.model,
        tools.join(", "),
        profile.system_prompt,
    )
}

/// All agent profiles for a workspace, keyed by agent name.
#[derive(Debug, Clone, Default)]
pub struct AgentRegistry {
    agents: BTreeMap<String, AgentProfile>,
}

/// File extension profile files carry unless configured otherwise.
pub const DEFAULT_PROFILE_EXTENSION: &str = "agent";

impl AgentRegistry {
    /// Load every `*.agent` file directly inside `dir`. Files are visited
    /// in filename order; two files declaring the same agent name is an
    /// error naming both paths.
    pub fn load(dir: &Path) -> Result<Self, RegistryError> {
        Self::load_with_extension(dir, DEFAULT_PROFILE_EXTENSION)
    }

    pub fn load_with_extension(dir: &Path, extension: &str) -> Result<Self, RegistryError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| RegistryError::Io { path: dir.display().to_string(), message: e.to_string() })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == extension))
            .collect();
        paths.sort();

        let mut agents: BTreeMap<String, AgentProfile> = BTreeMap::new();
        let mut sources: BTreeMap<String, PathBuf> = BTreeMap::new();
        for path in paths {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| RegistryError::Io { path: path.display().to_string(), message: e.to_string() })?;
            let profile = parse_profile(&text).map_err(|e| RegistryError::InFile {
                path: path.display().to_string(),
                source: Box::new(e),
            })?;
            if let Some(first) = sources.get(&profile.name) {
                return Err(RegistryError::DuplicateAgentName {
                    name: profile.name,
                    first: first.display().to_string(),
                    second: path.display().to_string(),
                });
            }
            sources.insert(profile.name.clone(), path);
            agents.insert(profile.name.clone(), profile);
        }
        Ok(Self { agents })
    }

    pub fn from_profiles(profiles: Vec<AgentProfile>) -> Self {
        let agents = profiles.into_iter().map(|p| (p.name.clone(), p)).collect();
        Self { agents }
    }

    pub fn get(&self, name: &str) -> Option<&AgentProfile> {
        self.agents.get(name)
    }

    /// Like [`get`](Self::get) but a miss names every agent that does
    /// exist, so a typo in a role is diagnosable from the error alone.
    pub fn require(&self, name: &str) -> Result<&AgentProfile, RegistryError> {
        self.agents.get(name).ok_or_else(|| RegistryError::NotFound {
            name: name.to_string(),
            known: self.names(),
        })
    }

    /// Profiles in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = &AgentProfile> {
        self.agents.values()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.agents.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ARCHITECT: &str = "name: backend-architect\n\
        description: Designs APIs, data models, and service boundaries\n\
        model: sonnet\n\
        tools: Read, Write, Edit, Bash\n\
        \n\
        You are a senior backend architect. Design APIs and data models\n\
        before writing code, and keep service boundaries explicit.\n";

    #[test]
    fn parses_header_and_prompt() {
        let profile = parse_profile(ARCHITECT).unwrap();
        assert_eq!(profile.name, "backend-architect");
        assert_eq!(profile.model, ModelClass::Balanced);
        assert_eq!(
            profile.tools,
            vec![ToolKind::Read, ToolKind::Write, ToolKind::Edit, ToolKind::Bash]
        );
        assert!(profile.system_prompt.starts_with("You are a senior backend architect."));
        assert!(profile.description.contains("service boundaries"));
    }

    #[test]
    fn crlf_input_is_accepted() {
        let crlf = ARCHITECT.replace('\n', "\r\n");
        assert_eq!(parse_profile(&crlf).unwrap(), parse_profile(ARCHITECT).unwrap());
    }

    #[test]
    fn model_defaults_to_balanced_when_omitted() {
        let text = "name: helper\ndescription: d\ntools: Read\n\nprompt body\n";
        assert_eq!(parse_profile(text).unwrap().model, ModelClass::Balanced);
    }

    #[test]
    fn model_aliases_map_to_classes() {
        for (alias, class) in [
            ("haiku", ModelClass::Fast),
            ("sonnet", ModelClass::Balanced),
            ("opus", ModelClass::Powerful),
            ("fast", ModelClass::Fast),
            ("balanced", ModelClass::Balanced),
            ("powerful", ModelClass::Powerful),
        ] {
            let text = format!("name: a\ndescription: d\nmodel: {alias}\ntools: Read\n\np\n");
            assert_eq!(parse_profile(&text).unwrap().model, class, "alias {alias}");
        }
        let bad = "name: a\ndescription: d\nmodel: gpt-x\ntools: Read\n\np\n";
        assert_eq!(parse_profile(bad).unwrap_err(), RegistryError::UnknownModel("gpt-x".into()));
    }

    #[test]
    fn duplicate_tools_keep_first_occurrence_order() {
        let text = "name: a\ndescription: d\ntools: Edit, Read, Edit, Bash, Read\n\np\n";
        let profile = parse_profile(text).unwrap();
        assert_eq!(profile.tools, vec![ToolKind::Edit, ToolKind::Read, ToolKind::Bash]);
    }

    #[test]
    fn rejects_malformed_profiles() {
        let missing = "description: d\ntools: Read\n\np\n";
        assert_eq!(parse_profile(missing).unwrap_err(), RegistryError::MissingField("name"));

        let unknown_key = "name: a\ndescription: d\ntemperature: 1\ntools: Read\n\np\n";
        assert_eq!(
            parse_profile(unknown_key).unwrap_err(),
            RegistryError::UnknownHeaderKey("temperature".into())
        );

        let no_prompt = "name: a\ndescription: d\ntools: Read\n\n   \n";
        assert_eq!(parse_profile(no_prompt).unwrap_err(), RegistryError::EmptyPrompt);

        let bad_tool = "name: a\ndescription: d\ntools: Read, Fly\n\np\n";
        assert_eq!(parse_profile(bad_tool).unwrap_err(), RegistryError::UnknownTool("Fly".into()));

        let bad_name = "name: Big Agent\ndescription: d\ntools: Read\n\np\n";
        assert_eq!(
            parse_profile(bad_name).unwrap_err(),
            RegistryError::InvalidName("Big Agent".into())
        );
    }

    #[test]
    fn registry_load_sorts_and_detects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let write = |file: &str, name: &str| {
            std::fs::write(
                dir.path().join(file),
                format!("name: {name}\ndescription: d\ntools: Read\n\np\n"),
            )
            .unwrap();
        };
        write("b.agent", "bravo");
        write("a.agent", "alpha");
        std::fs::write(dir.path().join("notes.txt"), "not a profile").unwrap();

        let registry = AgentRegistry::load(dir.path()).unwrap();
        assert_eq!(registry.names(), vec!["alpha", "bravo"]);
        assert!(registry.require("alpha").is_ok());
        match registry.require("Alpha").unwrap_err() {
            RegistryError::NotFound { name, known } => {
                assert_eq!(name, "Alpha");
                assert_eq!(known, vec!["alpha", "bravo"]);
            }
            other => panic!("expected not-found error, got {other:?}"),
        }

        write("c.agent", "alpha");
        let err = AgentRegistry::load(dir.path()).unwrap_err();
        match err {
            RegistryError::DuplicateAgentName { name, first, second } => {
                assert_eq!(name, "alpha");
                assert!(first.ends_with("a.agent"));
                assert!(second.ends_with("c.agent"));
            }
            other => panic!("expected duplicate-name error, got {other:?}"),
        }
    }

    #[test]
    fn registry_load_annotates_parse_errors_with_the_file_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("broken.agent"), "name: ok\n\nprompt\n").unwrap();
        match AgentRegistry::load(dir.path()).unwrap_err() {
            RegistryError::InFile { path, source } => {
                assert!(path.ends_with("broken.agent"));
                assert_eq!(*source, RegistryError::MissingField("description"));
            }
            other => panic!("expected in-file error, got {other:?}"),
        }
    }

    fn arb_profile() -> impl Strategy<Value = AgentProfile> {
        let name = "[a-z][a-z0-9_-]{0,12}";
        let description = "[ -~&&[^\r\n]]{1,40}";
        let prompt = "[a-zA-Z][a-zA-Z0-9 .,]{0,80}";
        let tools = proptest::sample::subsequence(ToolKind::ALL.to_vec(), 1..=6);
        let model = proptest::sample::select(vec![
            ModelClass::Fast,
            ModelClass::Balanced,
            ModelClass::Powerful,
        ]);
        (name, description, prompt, tools, model).prop_map(|(name, description, prompt, tools, model)| {
            AgentProfile {
                name,
                description: description.trim().to_string() + ".",
                model,
                tools,
                system_prompt: prompt,
            }
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_round_trips(profile in arb_profile()) {
            let parsed = parse_profile(&serialize_profile(&profile)).unwrap();
            prop_assert_eq!(parsed, profile);
        }
    }
}
