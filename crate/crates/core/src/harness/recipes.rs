use super::ExperimentConfig;
use crate::error::{Error, Result};

const RECIPES: [(&str, &str); 7] = [
    ("fig1-left", include_str!("../../recipes/fig1-left.json")),
    ("fig1-right", include_str!("../../recipes/fig1-right.json")),
    ("fig2", include_str!("../../recipes/fig2.json")),
    ("fig3", include_str!("../../recipes/fig3.json")),
    (
        "appendix-h-server",
        include_str!("../../recipes/appendix-h-server.json"),
    ),
    (
        "appendix-h-client",
        include_str!("../../recipes/appendix-h-client.json"),
    ),
    (
        "fedsplit-appendix-g",
        include_str!("../../recipes/fedsplit-appendix-g.json"),
    ),
];

pub const RECIPE_NAMES: [&str; 7] = [
    "fig1-left",
    "fig1-right",
    "fig2",
    "fig3",
    "appendix-h-server",
    "appendix-h-client",
    "fedsplit-appendix-g",
];

/// Raw JSON of a pinned recipe.
pub fn recipe_text(name: &str) -> Result<&'static str> {
    RECIPES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown recipe {name:?}; known: {}",
                RECIPE_NAMES.join(", ")
            ))
        })
}

pub fn recipe(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(recipe_text(name)?)
}
