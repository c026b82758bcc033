use crate::image::Image;
use crate::{Error, Result};

/// A sampled video: frames with strictly increasing timestamps (seconds).
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub frames: Vec<Image>,
    pub timestamps: Vec<f64>,
    pub duration: Option<f64>,
    pub fps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PromptItem {
    Text(String),
    Image(Image),
    Video(Video),
}

/// An interleaved prompt.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PromptSpec {
    pub items: Vec<PromptItem>,
}

impl PromptSpec {
    pub fn new(items: Vec<PromptItem>) -> Self {
        Self { items }
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Prompt("prompt has no items".into()));
        }
        for (i, item) in self.items.iter().enumerate() {
            match item {
                PromptItem::Text(_) => {}
                PromptItem::Image(img) => check_image(img, i)?,
                PromptItem::Video(v) => {
                    if v.frames.is_empty() {
                        return Err(Error::Prompt(format!("item {i}: video without frames")));
                    }
                    if v.frames.len() != v.timestamps.len() {
                        return Err(Error::Prompt(format!(
                            "item {i}: {} frames but {} timestamps",
                            v.frames.len(),
                            v.timestamps.len()
                        )));
                    }
                    if v.timestamps.iter().any(|t| !t.is_finite() || *t < 0.0) {
                        return Err(Error::Prompt(format!("item {i}: timestamps must be finite and >= 0")));
                    }
                    if v.timestamps.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(Error::Prompt(format!("item {i}: timestamps not strictly increasing")));
                    }
                    for f in &v.frames {
                        check_image(f, i)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Images in visual-unit order (unit id `k+1` is element `k`).
    pub fn visual_units(&self) -> Vec<&Image> {
        self.items
            .iter()
            .flat_map(|item| match item {
                PromptItem::Text(_) => Vec::new(),
                PromptItem::Image(img) => vec![img],
                PromptItem::Video(v) => v.frames.iter().collect(),
            })
            .collect()
    }
}

fn check_image(img: &Image, item: usize) -> Result<()> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Prompt(format!("item {item}: image smaller than 1x1")));
    }
    Ok(())
}
