//! Content-addressed image payloads.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;

/// Name of the digest algorithm recorded in every manifest.
pub const HASH_ALGORITHM: &str = "sha256";

/// Hex-encoded SHA-256 of `bytes`.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Png,
    Jpeg,
}

impl MediaType {
    pub fn extension(self) -> &'static str {
        match self {
            MediaType::Png => "png",
            MediaType::Jpeg => "jpg",
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            MediaType::Png => "image/png",
            MediaType::Jpeg => "image/jpeg",
        }
    }

    /// Sniffs the media type from magic bytes.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(MediaType::Png)
        } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
            Some(MediaType::Jpeg)
        } else {
            None
        }
    }
}

/// An immutable image payload identified by the digest of its bytes.
///
/// Cloning is cheap: the bytes are shared.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageAsset {
    id: String,
    bytes: Arc<[u8]>,
    media_type: MediaType,
    digest: String,
}

impl ImageAsset {
    pub fn new(bytes: impl Into<Arc<[u8]>>, media_type: MediaType) -> Result<Self, ModelError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(ModelError::EmptyAsset);
        }
        let digest = digest_hex(&bytes);
        Ok(Self {
            id: digest.clone(),
            bytes,
            media_type,
            digest,
        })
    }

    /// Rebuilds an asset from stored parts, rejecting a digest that does not
    /// match the bytes.
    pub fn from_stored(
        bytes: impl Into<Arc<[u8]>>,
        media_type: MediaType,
        expected_digest: &str,
    ) -> Result<Self, ModelError> {
        let asset = Self::new(bytes, media_type)?;
        if asset.digest != expected_digest {
            return Err(ModelError::DigestMismatch {
                expected: expected_digest.to_owned(),
                actual: asset.digest,
            });
        }
        Ok(asset)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn media_type(&self) -> MediaType {
        self.media_type
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn verify(&self) -> bool {
        !self.bytes.is_empty() && digest_hex(&self.bytes) == self.digest
    }
}

impl fmt::Debug for ImageAsset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageAsset")
            .field("digest", &self.digest)
            .field("media_type", &self.media_type)
            .field("len", &self.bytes.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_sha256() {
        // sha256("abc")
        assert_eq!(
            digest_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn empty_bytes_rejected() {
        assert!(matches!(
            ImageAsset::new(Vec::new(), MediaType::Png),
            Err(ModelError::EmptyAsset)
        ));
    }

    #[test]
    fn stored_digest_checked() {
        let asset = ImageAsset::new(b"abc".to_vec(), MediaType::Png).unwrap();
        assert!(asset.verify());
        assert!(ImageAsset::from_stored(b"abc".to_vec(), MediaType::Png, asset.digest()).is_ok());
        let err = ImageAsset::from_stored(b"abd".to_vec(), MediaType::Png, asset.digest());
        assert!(matches!(err, Err(ModelError::DigestMismatch { .. })));
    }

    #[test]
    fn sniffing() {
        assert_eq!(MediaType::sniff(b"\x89PNG\r\n\x1a\nrest"), Some(MediaType::Png));
        assert_eq!(MediaType::sniff(&[0xff, 0xd8, 0xff, 0xe0]), Some(MediaType::Jpeg));
        assert_eq!(MediaType::sniff(b"GIF89a"), None);
    }
}
