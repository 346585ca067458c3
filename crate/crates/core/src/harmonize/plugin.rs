use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{FedError, Result};
use crate::numerics::Tensor;

/// External image-to-image harmonizer (e.g. a pretrained generative
/// model). Implementations receive one `[C, H, W]` image and the client it
/// belongs to.
pub trait HarmonizerPlugin: Send + Sync {
    fn name(&self) -> &str;
    fn apply(&self, image: &Tensor, client: usize) -> Result<Tensor>;
}

/// Reference plugin that returns its input.
pub struct NoopPlugin;

impl HarmonizerPlugin for NoopPlugin {
    fn name(&self) -> &str {
        "noop"
    }

    fn apply(&self, image: &Tensor, _client: usize) -> Result<Tensor> {
        Ok(image.clone())
    }
}

#[derive(Clone)]
pub struct PluginRegistry {
    plugins: BTreeMap<String, Arc<dyn HarmonizerPlugin>>,
}

impl Default for PluginRegistry {
    fn default() -> Self {
        let mut r = PluginRegistry { plugins: BTreeMap::new() };
        r.register(Arc::new(NoopPlugin));
        r
    }
}

impl PluginRegistry {
    pub fn register(&mut self, plugin: Arc<dyn HarmonizerPlugin>) {
        self.plugins.insert(plugin.name().to_string(), plugin);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn HarmonizerPlugin>> {
        self.plugins.get(name).cloned().ok_or_else(|| {
            let known: Vec<&str> = self.plugins.keys().map(String::as_str).collect();
            FedError::config("harmonize.name", format!("unknown plugin `{name}`; registered: {known:?}"))
        })
    }
}

/// Runs a plugin and enforces the shape contract: same shape, finite values.
pub fn apply_plugin(plugin: &dyn HarmonizerPlugin, image: &Tensor, client: usize) -> Result<Tensor> {
    let out = plugin.apply(image, client)?;
    if out.shape() != image.shape() {
        return Err(FedError::Shape(format!(
            "plugin `{}` changed shape {:?} -> {:?}",
            plugin.name(),
            image.shape(),
            out.shape()
        )));
    }
    if !out.is_finite() {
        return Err(FedError::Shape(format!("plugin `{}` produced non-finite values", plugin.name())));
    }
    Ok(out)
}
