use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Aggregation of raw dataset tags into the categories a model is trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTaxonomy {
    pub label: String,
    pub categories: Vec<String>,
    /// raw tag -> category name
    pub map: BTreeMap<String, String>,
}

const ED_POSITIVE: [&str; 16] = [
    "surprised", "excited", "proud", "grateful", "impressed", "confident", "hopeful", "joyful",
    "prepared", "nostalgic", "anticipating", "content", "sentimental", "caring", "trusting",
    "faithful",
];
const ED_NEGATIVE: [&str; 16] = [
    "annoyed", "angry", "sad", "lonely", "afraid", "disgusted", "terrified", "anxious",
    "disappointed", "guilty", "furious", "jealous", "embarrassed", "devastated", "ashamed",
    "apprehensive",
];

impl LabelTaxonomy {
    pub fn new(
        label: impl Into<String>,
        categories: Vec<String>,
        map: BTreeMap<String, String>,
    ) -> Result<Self, CorpusError> {
        let tax = Self {
            label: label.into(),
            categories,
            map,
        };
        tax.validate()?;
        Ok(tax)
    }

    /// A taxonomy whose raw tags are exactly its category names.
    pub fn identity(label: impl Into<String>, categories: &[&str]) -> Self {
        let map = categories
            .iter()
            .map(|c| (c.to_string(), c.to_string()))
            .collect();
        Self {
            label: label.into(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
            map,
        }
    }

    /// DailyDialog emotions folded into no-emotion / negative / positive.
    pub fn daily_dialog_emotion() -> Self {
        let mut map = BTreeMap::new();
        map.insert("no emotion".to_string(), "no emotion".to_string());
        for tag in ["anger", "disgust", "fear", "sadness"] {
            map.insert(tag.to_string(), "negative".to_string());
        }
        for tag in ["happiness", "surprise"] {
            map.insert(tag.to_string(), "positive".to_string());
        }
        Self {
            label: "emotion".into(),
            categories: vec!["no emotion".into(), "negative".into(), "positive".into()],
            map,
        }
    }

    /// DailyDialog dialogue acts, unaggregated.
    pub fn daily_dialog_action() -> Self {
        Self::identity("action", &["inform", "question", "directive", "commissive"])
    }

    /// EmpatheticDialogues' 32 emotions split into negative / positive.
    pub fn empathetic_dialogues_emotion() -> Self {
        let mut map = BTreeMap::new();
        for tag in ED_NEGATIVE {
            map.insert(tag.to_string(), "negative".to_string());
        }
        for tag in ED_POSITIVE {
            map.insert(tag.to_string(), "positive".to_string());
        }
        Self {
            label: "emotion".into(),
            categories: vec!["negative".into(), "positive".into()],
            map,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.categories.is_empty() {
            return Err(CorpusError::Taxonomy(format!(
                "label {:?} has no categories",
                self.label
            )));
        }
        for (i, c) in self.categories.iter().enumerate() {
            if self.categories[..i].contains(c) {
                return Err(CorpusError::Taxonomy(format!("duplicate category {c:?}")));
            }
        }
        for (tag, cat) in &self.map {
            if !self.categories.contains(cat) {
                return Err(CorpusError::Taxonomy(format!(
                    "raw tag {tag:?} maps to undeclared category {cat:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_id(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn category_of(&self, raw_tag: &str) -> Option<usize> {
        self.map.get(raw_tag).and_then(|c| self.category_id(c))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let tax: Self = serde_json::from_str(&text)
            .map_err(|e| CorpusError::Taxonomy(format!("{}: {e}", path.display())))?;
        tax.validate()?;
        Ok(tax)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_tables_are_total_and_valid() {
        for tax in [
            LabelTaxonomy::daily_dialog_emotion(),
            LabelTaxonomy::daily_dialog_action(),
            LabelTaxonomy::empathetic_dialogues_emotion(),
        ] {
            tax.validate().unwrap();
            for tag in tax.map.keys() {
                assert!(tax.category_of(tag).is_some(), "{tag}");
            }
        }
        assert_eq!(LabelTaxonomy::empathetic_dialogues_emotion().map.len(), 32);
        assert_eq!(LabelTaxonomy::daily_dialog_emotion().map.len(), 7);
    }

    #[test]
    fn dangling_map_target_rejected() {
        let mut map = BTreeMap::new();
        map.insert("x".to_string(), "nowhere".to_string());
        assert!(LabelTaxonomy::new("l", vec!["a".into()], map).is_err());
        assert!(LabelTaxonomy::new("l", vec![], BTreeMap::new()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tax.json");
        let tax = LabelTaxonomy::daily_dialog_emotion();
        tax.save(&path).unwrap();
        assert_eq!(LabelTaxonomy::load(&path).unwrap(), tax);
    }
}
