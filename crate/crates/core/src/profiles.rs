//! Built-in device profiles and profile file loading.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::device::{DeviceProfile, ProfileError};

const ZN540_JSON: &str = include_str!("../../../profiles/zn540.json");
const TINY_JSON: &str = include_str!("../../../profiles/tiny.json");

/// Name and JSON source of every built-in profile.
pub const BUILTIN: [(&str, &str); 2] = [("zn540", ZN540_JSON), ("tiny", TINY_JSON)];

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed profile {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid profile {path}: {source}")]
    Invalid { path: String, source: ProfileError },
}

/// The evaluated ZNS device: 2048 MiB zones with 1077 MiB capacity,
/// 3688 zones, 14 active zones and a 4 GiB conventional namespace.
pub fn zn540() -> DeviceProfile {
    serde_json::from_str(ZN540_JSON).expect("built-in profile parses")
}

/// Eight 4 MiB zones with 3 MiB capacity and two active zones.
pub fn tiny() -> DeviceProfile {
    serde_json::from_str(TINY_JSON).expect("built-in profile parses")
}

pub fn builtin(name: &str) -> Option<DeviceProfile> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, json)| serde_json::from_str(json).expect("built-in profile parses"))
}

pub fn from_json(json: &str, origin: &str) -> Result<DeviceProfile, LoadError> {
    let profile: DeviceProfile = serde_json::from_str(json).map_err(|source| LoadError::Parse {
        path: origin.to_string(),
        source,
    })?;
    profile.validate().map_err(|source| LoadError::Invalid {
        path: origin.to_string(),
        source,
    })?;
    Ok(profile)
}

/// Load a profile from a file, or from a built-in name when no such file exists.
pub fn load(path: impl AsRef<Path>) -> Result<DeviceProfile, LoadError> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    if !path.exists() {
        if let Some(p) = path.to_str().and_then(builtin) {
            return Ok(p);
        }
    }
    let json = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: origin.clone(),
        source,
    })?;
    from_json(&json, &origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for (name, _) in BUILTIN {
            builtin(name).unwrap().validate().unwrap();
        }
        let p = zn540();
        assert_eq!(p.zone_size * 512, 2048 << 20);
        assert_eq!(p.zone_capacity * 512, 1077 << 20);
        assert_eq!(p.nr_zones, 3688);
        assert_eq!(p.max_active_zones, 14);
        let t = tiny();
        assert_eq!(t.zone_size * 512, 4 << 20);
        assert_eq!(t.zone_capacity * 512, 3 << 20);
        assert_eq!((t.nr_zones, t.max_active_zones), (8, 2));
    }

    #[test]
    fn parse_errors_name_the_field() {
        let err = from_json(r#"{"sector_size": 512}"#, "x.json").unwrap_err();
        assert!(err.to_string().contains("zone_size_sectors"), "{err}");
        let mut p = tiny();
        p.zone_capacity = 9000;
        let json = serde_json::to_string(&p).unwrap();
        let err = from_json(&json, "x.json").unwrap_err();
        assert!(err.to_string().contains("zone_capacity_sectors"), "{err}");
    }

    #[test]
    fn profile_json_round_trip() {
        let p = zn540();
        let back: DeviceProfile = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
    }
}
