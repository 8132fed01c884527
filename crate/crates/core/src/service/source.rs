use std::path::{Path, PathBuf};
use std::time::Duration;

use async_trait::async_trait;
use thiserror::Error;

use crate::domain::Frame;
use crate::imageio;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("listing {path}: {source}")]
    List { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Image(#[from] imageio::ImageIoError),
    #[error("capture command {program:?}: {reason}")]
    Command { program: String, reason: String },
}

/// Where frames come from.
#[async_trait]
pub trait ImageSource: Send {
    /// `Ok(None)` once the source is exhausted.
    async fn capture(&mut self) -> Result<Option<Frame>, CaptureError>;
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CaptureError> {
    let entries = std::fs::read_dir(dir).map_err(|source| CaptureError::List {
        path: dir.to_owned(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Replays a directory of captures. Frame ids are file names, so fixture
/// detections and labels can be keyed the same way.
#[derive(Debug)]
pub struct DirectorySource {
    files: Vec<PathBuf>,
    next: usize,
    looping: bool,
}

impl DirectorySource {
    pub fn new(dir: &Path, looping: bool) -> Result<Self, CaptureError> {
        Ok(Self {
            files: list_images(dir)?,
            next: 0,
            looping,
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

pub fn frame_from_file(path: &Path) -> Result<Frame, CaptureError> {
    let image = imageio::read_image(path)?;
    let id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(Frame::new(id, image))
}

#[async_trait]
impl ImageSource for DirectorySource {
    async fn capture(&mut self) -> Result<Option<Frame>, CaptureError> {
        if self.next >= self.files.len() {
            if !self.looping || self.files.is_empty() {
                return Ok(None);
            }
            self.next = 0;
        }
        let path = self.files[self.next].clone();
        self.next += 1;
        let frame = tokio::task::spawn_blocking(move || frame_from_file(&path))
            .await
            .map_err(|e| CaptureError::Command {
                program: "reader".into(),
                reason: e.to_string(),
            })??;
        Ok(Some(frame))
    }
}

/// Runs an external capture command (e.g. `libcamera-still -o -`) and
/// decodes the image it writes to stdout.
#[derive(Debug)]
pub struct CommandSource {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    captured: u64,
}

impl CommandSource {
    pub fn new(program: impl Into<String>, args: Vec<String>, timeout: Duration) -> Self {
        Self {
            program: program.into(),
            args,
            timeout,
            captured: 0,
        }
    }
}

#[async_trait]
impl ImageSource for CommandSource {
    async fn capture(&mut self) -> Result<Option<Frame>, CaptureError> {
        let fail = |reason: String| CaptureError::Command {
            program: self.program.clone(),
            reason,
        };
        let run = tokio::process::Command::new(&self.program)
            .args(&self.args)
            .kill_on_drop(true)
            .output();
        let out = tokio::time::timeout(self.timeout, run)
            .await
            .map_err(|_| fail(format!("timed out after {:?}", self.timeout)))?
            .map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(fail(format!("{}: {}", out.status, stderr.trim())));
        }
        let image = imageio::decode(&out.stdout)?;
        self.captured += 1;
        Ok(Some(Frame::new(format!("capture-{:06}", self.captured), image)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ImageBuffer;

    #[tokio::test]
    async fn directory_replay_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::filled_rgb(4, 3, [1, 2, 3]).unwrap();
        for name in ["b.png", "a.png", "c.jpg"] {
            imageio::write_image(&img, &dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();

        let mut src = DirectorySource::new(dir.path(), false).unwrap();
        assert_eq!(src.len(), 3);
        let mut ids = Vec::new();
        while let Some(f) = src.capture().await.unwrap() {
            assert_eq!(f.image.dims(), (4, 3));
            ids.push(f.id);
        }
        assert_eq!(ids, ["a.png", "b.png", "c.jpg"]);

        let mut looping = DirectorySource::new(dir.path(), true).unwrap();
        for _ in 0..4 {
            looping.capture().await.unwrap().unwrap();
        }
        assert_eq!(looping.capture().await.unwrap().unwrap().id, "b.png");
    }

    #[tokio::test]
    async fn missing_directory_errors() {
        assert!(DirectorySource::new(Path::new("/nonexistent/frames"), false).is_err());
    }

    #[cfg(unix)]
    #[tokio::test]
    async fn command_hook() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("shot.png");
        imageio::write_image(&ImageBuffer::filled_rgb(5, 5, [9, 9, 9]).unwrap(), &file).unwrap();

        let mut ok = CommandSource::new("cat", vec![file.display().to_string()], Duration::from_secs(5));
        let f = ok.capture().await.unwrap().unwrap();
        assert_eq!((f.id.as_str(), f.image.dims()), ("capture-000001", (5, 5)));

        let mut bad = CommandSource::new("false", vec![], Duration::from_secs(5));
        assert!(matches!(bad.capture().await, Err(CaptureError::Command { .. })));
    }
}
