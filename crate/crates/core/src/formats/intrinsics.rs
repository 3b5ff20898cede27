use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::CameraIntrinsics;

/// Parses `{"fx":..,"fy":..,"cx":..,"cy":..}`; unknown fields are ignored.
pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics> {
    let k: CameraIntrinsics =
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("intrinsics: {e}")))?;
    k.validate()?;
    Ok(k)
}

pub fn load_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_intrinsics(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_intrinsics(k: &CameraIntrinsics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(k).expect("intrinsics serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_object() {
        let k = parse_intrinsics(r#"{"fx":500,"fy":500,"cx":256,"cy":256}"#).unwrap();
        assert_eq!(k, CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 256.0, cy: 256.0 });
    }

    #[test]
    fn missing_field_and_bad_focal() {
        assert!(parse_intrinsics(r#"{"fx":500,"cx":256,"cy":256}"#).is_err());
        assert!(parse_intrinsics(r#"{"fx":0,"fy":500,"cx":256,"cy":256}"#).is_err());
        assert!(parse_intrinsics(r#"{"fx":"a","fy":500,"cx":256,"cy":256}"#).is_err());
    }

    #[test]
    fn extra_fields_ignored() {
        let k = parse_intrinsics(r#"{"fx":1,"fy":2,"cx":3,"cy":4,"model":"pinhole","dist":[0,0]}"#).unwrap();
        assert_eq!((k.fx, k.fy, k.cx, k.cy), (1.0, 2.0, 3.0, 4.0));
    }
}
