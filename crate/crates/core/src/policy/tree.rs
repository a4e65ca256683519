use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Depth-bounded axis-aligned treatment rule.
///
/// Routing: `x[feature] <= threshold` goes left, everything else goes right.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyTree {
    Leaf { action: i8 },
    Split { feature: usize, threshold: f64, left: Box<PolicyTree>, right: Box<PolicyTree> },
}

impl PolicyTree {
    pub fn constant(action: i8) -> Self {
        PolicyTree::Leaf { action }
    }

    pub fn split(feature: usize, threshold: f64, left: PolicyTree, right: PolicyTree) -> Self {
        PolicyTree::Split { feature, threshold, left: Box::new(left), right: Box::new(right) }
    }

    pub fn predict(&self, x: &[f64]) -> i8 {
        let mut node = self;
        loop {
            match node {
                PolicyTree::Leaf { action } => return *action,
                PolicyTree::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            PolicyTree::Leaf { .. } => 0,
            PolicyTree::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            PolicyTree::Leaf { .. } => None,
            PolicyTree::Split { feature, left, right, .. } => {
                Some((*feature).max(left.max_feature().unwrap_or(0)).max(right.max_feature().unwrap_or(0)))
            }
        }
    }

    /// Merges splits whose two children are leaves with the same action.
    pub fn simplify(self) -> Self {
        match self {
            PolicyTree::Leaf { .. } => self,
            PolicyTree::Split { feature, threshold, left, right } => {
                let l = left.simplify();
                let r = right.simplify();
                match (&l, &r) {
                    (PolicyTree::Leaf { action: a }, PolicyTree::Leaf { action: b }) if a == b => l,
                    _ => PolicyTree::split(feature, threshold, l, r),
                }
            }
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<i8> {
        match self {
            PolicyTree::Leaf { action } => vec![*action],
            PolicyTree::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    fn to_json(&self, names: &[String]) -> NodeJson {
        match self {
            PolicyTree::Leaf { action } => NodeJson { action: Some(*action), ..NodeJson::default() },
            PolicyTree::Split { feature, threshold, left, right } => NodeJson {
                feature: Some(names[*feature].clone()),
                threshold: Some(*threshold),
                left: Some(Box::new(left.to_json(names))),
                right: Some(Box::new(right.to_json(names))),
                action: None,
            },
        }
    }

    fn from_json(node: &NodeJson, names: &[String]) -> Result<Self> {
        match (&node.feature, node.threshold, &node.left, &node.right, node.action) {
            (None, None, None, None, Some(a)) if a == 1 || a == -1 => Ok(PolicyTree::Leaf { action: a }),
            (Some(f), Some(t), Some(l), Some(r), None) => {
                let feature = names
                    .iter()
                    .position(|n| n == f)
                    .ok_or_else(|| Error::validation(format!("tree references unknown feature `{f}`")))?;
                if !t.is_finite() {
                    return Err(Error::validation("tree threshold must be finite"));
                }
                Ok(PolicyTree::split(feature, t, Self::from_json(l, names)?, Self::from_json(r, names)?))
            }
            _ => Err(Error::validation("malformed tree node")),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct NodeJson {
    feature: Option<String>,
    threshold: Option<f64>,
    left: Option<Box<NodeJson>>,
    right: Option<Box<NodeJson>>,
    action: Option<i8>,
}

/// A tree together with the feature names it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeRule {
    pub features: Vec<String>,
    pub max_depth: usize,
    pub tree: PolicyTree,
}

#[derive(Serialize, Deserialize)]
struct TreeRuleJson {
    features: Vec<String>,
    max_depth: usize,
    tree: NodeJson,
}

impl Serialize for TreeRule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TreeRuleJson { features: self.features.clone(), max_depth: self.max_depth, tree: self.tree.to_json(&self.features) }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TreeRule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = TreeRuleJson::deserialize(d)?;
        let tree = PolicyTree::from_json(&j.tree, &j.features).map_err(serde::de::Error::custom)?;
        if tree.depth() > j.max_depth {
            return Err(serde::de::Error::custom("tree is deeper than its declared max_depth"));
        }
        Ok(TreeRule { features: j.features, max_depth: j.max_depth, tree })
    }
}
