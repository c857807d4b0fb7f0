use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six public contextual categories describing an institution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    School,
    Academic,
    Demographic,
    Completion,
    Cost,
    FinancialAid,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::School,
        Category::Academic,
        Category::Demographic,
        Category::Completion,
        Category::Cost,
        Category::FinancialAid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::School => "school",
            Category::Academic => "academic",
            Category::Demographic => "demographic",
            Category::Completion => "completion",
            Category::Cost => "cost",
            Category::FinancialAid => "financial_aid",
        }
    }

    pub fn index(self) -> usize {
        Category::ALL.iter().position(|c| *c == self).unwrap()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown context category `{s}`")))
    }
}

/// One value per category.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerCategory<T> {
    pub school: T,
    pub academic: T,
    pub demographic: T,
    pub completion: T,
    pub cost: T,
    pub financial_aid: T,
}

impl<T> PerCategory<T> {
    pub fn from_fn(mut f: impl FnMut(Category) -> T) -> Self {
        Self {
            school: f(Category::School),
            academic: f(Category::Academic),
            demographic: f(Category::Demographic),
            completion: f(Category::Completion),
            cost: f(Category::Cost),
            financial_aid: f(Category::FinancialAid),
        }
    }

    pub fn get(&self, c: Category) -> &T {
        match c {
            Category::School => &self.school,
            Category::Academic => &self.academic,
            Category::Demographic => &self.demographic,
            Category::Completion => &self.completion,
            Category::Cost => &self.cost,
            Category::FinancialAid => &self.financial_aid,
        }
    }

    pub fn get_mut(&mut self, c: Category) -> &mut T {
        match c {
            Category::School => &mut self.school,
            Category::Academic => &mut self.academic,
            Category::Demographic => &mut self.demographic,
            Category::Completion => &mut self.completion,
            Category::Cost => &mut self.cost,
            Category::FinancialAid => &mut self.financial_aid,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, &T)> {
        Category::ALL.into_iter().map(move |c| (c, self.get(c)))
    }

    pub fn map<U>(&self, mut f: impl FnMut(Category, &T) -> U) -> PerCategory<U> {
        PerCategory::from_fn(|c| f(c, self.get(c)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrValue {
    Numeric(f64),
    Categorical(String),
    Missing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextAttribute {
    pub name: String,
    pub value: AttrValue,
}

impl ContextAttribute {
    pub fn numeric(name: &str, v: f64) -> Self {
        Self {
            name: name.to_string(),
            value: AttrValue::Numeric(v),
        }
    }

    pub fn categorical(name: &str, v: &str) -> Self {
        Self {
            name: name.to_string(),
            value: AttrValue::Categorical(v.to_string()),
        }
    }
}

/// Institution-level public attributes, grouped by category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextualProfile {
    categories: BTreeMap<Category, Vec<ContextAttribute>>,
}

impl ContextualProfile {
    pub fn new(categories: BTreeMap<Category, Vec<ContextAttribute>>) -> Result<Self> {
        for c in Category::ALL {
            if !categories.contains_key(&c) {
                return Err(Error::Schema(format!("context is missing category `{c}`")));
            }
        }
        for (c, attrs) in &categories {
            for a in attrs {
                if let AttrValue::Numeric(v) = a.value {
                    if !v.is_finite() {
                        return Err(Error::Schema(format!(
                            "context attribute `{c}.{}` is not finite",
                            a.name
                        )));
                    }
                }
            }
        }
        Ok(Self { categories })
    }

    pub fn category(&self, c: Category) -> &[ContextAttribute] {
        &self.categories[&c]
    }

    pub fn attribute(&self, c: Category, name: &str) -> Option<&AttrValue> {
        self.category(c)
            .iter()
            .find(|a| a.name == name)
            .map(|a| &a.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requires_all_six_categories() {
        let mut cats: BTreeMap<Category, Vec<ContextAttribute>> = BTreeMap::new();
        for c in &Category::ALL[..5] {
            cats.insert(*c, vec![ContextAttribute::numeric("x", 1.0)]);
        }
        assert!(ContextualProfile::new(cats.clone()).is_err());
        cats.insert(Category::FinancialAid, vec![]);
        assert!(ContextualProfile::new(cats.clone()).is_ok());
        cats.insert(
            Category::Cost,
            vec![ContextAttribute::numeric("x", f64::NAN)],
        );
        assert!(ContextualProfile::new(cats).is_err());
    }

    #[test]
    fn category_names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
            assert_eq!(Category::ALL[c.index()], c);
        }
    }
}
