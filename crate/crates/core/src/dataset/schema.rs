use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hierarchy level a variable is measured at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Person,
    Household,
    Zone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Numeric,
    Categorical,
}

/// Substantive grouping used for grouped importance and for the stepwise
/// model-building order. Defaults from the level when not given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableGroup {
    Personal,
    Household,
    BuiltEnvironment,
}

impl VariableGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            VariableGroup::Personal => "personal",
            VariableGroup::Household => "household",
            VariableGroup::BuiltEnvironment => "built_environment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub level: Level,
    pub kind: VarKind,
    /// Ordered category labels (categorical only).
    #[serde(default)]
    pub categories: Vec<String>,
    /// Reference category, omitted from the dummy coding.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub units: String,
    #[serde(default)]
    pub group: Option<VariableGroup>,
}

impl VariableSpec {
    pub fn numeric(name: &str, level: Level) -> Self {
        VariableSpec {
            name: name.to_string(),
            level,
            kind: VarKind::Numeric,
            categories: Vec::new(),
            reference: None,
            units: String::new(),
            group: None,
        }
    }

    pub fn categorical(name: &str, level: Level, categories: &[&str], reference: &str) -> Self {
        VariableSpec {
            name: name.to_string(),
            level,
            kind: VarKind::Categorical,
            categories: categories.iter().map(|c| c.to_string()).collect(),
            reference: Some(reference.to_string()),
            units: String::new(),
            group: None,
        }
    }

    pub fn with_group(mut self, group: VariableGroup) -> Self {
        self.group = Some(group);
        self
    }

    pub fn with_units(mut self, units: &str) -> Self {
        self.units = units.to_string();
        self
    }

    pub fn group(&self) -> VariableGroup {
        self.group.unwrap_or(match self.level {
            Level::Person => VariableGroup::Personal,
            Level::Household => VariableGroup::Household,
            Level::Zone => VariableGroup::BuiltEnvironment,
        })
    }

    /// Index of the reference category.
    pub fn reference_index(&self) -> Option<usize> {
        let r = self.reference.as_ref()?;
        self.categories.iter().position(|c| c == r)
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

pub const PERSON_ID: &str = "person_id";
pub const HOUSEHOLD_ID: &str = "household_id";
pub const ZONE_ID: &str = "zone_id";

/// The variable schema of a wave plus the response column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "default_response")]
    pub response: String,
    pub variables: Vec<VariableSpec>,
}

fn default_response() -> String {
    "VMT_Person".to_string()
}

impl Schema {
    pub fn new(response: &str, variables: Vec<VariableSpec>) -> Result<Self> {
        let s = Schema {
            response: response.to_string(),
            variables,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let reserved = [PERSON_ID, HOUSEHOLD_ID, ZONE_ID, self.response.as_str()];
        for v in &self.variables {
            if v.name.is_empty() {
                return Err(Error::Schema("variable with empty name".into()));
            }
            if reserved.contains(&v.name.as_str()) {
                return Err(Error::Schema(format!("`{}` is a reserved column name", v.name)));
            }
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable `{}`", v.name)));
            }
            if v.kind == VarKind::Categorical {
                if v.categories.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical `{}` needs at least two categories",
                        v.name
                    )));
                }
                let mut cats = HashSet::new();
                if !v.categories.iter().all(|c| cats.insert(c)) {
                    return Err(Error::Schema(format!("`{}` has repeated categories", v.name)));
                }
                if v.reference_index().is_none() {
                    return Err(Error::Schema(format!(
                        "`{}`: reference {:?} is not one of its categories",
                        v.name, v.reference
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn at_level(&self, level: Level) -> impl Iterator<Item = &VariableSpec> {
        self.variables.iter().filter(move |v| v.level == level)
    }
}
