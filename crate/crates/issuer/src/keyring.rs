use captok_core::{KeyRecord, KeySet, SigningKey};

/// Signing key plus recently retired public keys.
///
/// Retired keys stay published for `overlap` seconds so tokens signed just
/// before a rotation keep verifying.
#[derive(Debug)]
pub struct Keyring {
    current: SigningKey,
    retired: Vec<(KeyRecord, i64)>,
    overlap: i64,
}

impl Keyring {
    pub fn new(current: SigningKey, overlap: i64) -> Self {
        Keyring {
            current,
            retired: Vec::new(),
            overlap,
        }
    }

    pub fn current(&self) -> &SigningKey {
        &self.current
    }

    /// Makes `next` current; returns its kid.
    pub fn rotate(&mut self, next: SigningKey, now: i64) -> String {
        let old = std::mem::replace(&mut self.current, next);
        self.retired.push((old.public_record(false), now));
        self.retired.retain(|(_, at)| now < at + self.overlap);
        self.current.kid().to_owned()
    }

    pub fn published(&self, now: i64) -> KeySet {
        let mut keys = vec![self.current.public_record(true)];
        keys.extend(
            self.retired
                .iter()
                .filter(|(_, at)| now < at + self.overlap)
                .map(|(k, _)| k.clone()),
        );
        KeySet::new(keys).expect("kids are digests of distinct keys")
    }
}
