use serde::{Deserialize, Serialize};

use super::{train_command, train_neutral, ClassifierError, Profile, MIN_TRAINING_WINDOWS};
use crate::signal::FeatureVector;
use crate::vocab::MentalCommand;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingState {
    Recording,
    Ready,
    Accepted,
    Rejected,
}

/// One recording of a label: collects windows until enough are in, then
/// waits for the user to accept or reject it.
#[derive(Clone, Debug)]
pub struct TrainingSession<T> {
    pub profile_name: String,
    pub label: MentalCommand,
    windows: Vec<FeatureVector<T>>,
    required: usize,
    state: TrainingState,
}

impl<T: Scalar> TrainingSession<T> {
    pub fn start(profile_name: impl Into<String>, label: MentalCommand) -> Self {
        Self::with_length(profile_name, label, MIN_TRAINING_WINDOWS)
    }

    pub fn with_length(profile_name: impl Into<String>, label: MentalCommand, required: usize) -> Self {
        Self {
            profile_name: profile_name.into(),
            label,
            windows: Vec::with_capacity(required),
            required: required.max(MIN_TRAINING_WINDOWS),
            state: TrainingState::Recording,
        }
    }

    pub fn state(&self) -> TrainingState {
        self.state
    }

    pub fn windows(&self) -> &[FeatureVector<T>] {
        &self.windows
    }

    pub fn required(&self) -> usize {
        self.required
    }

    /// Feeds one window; ignored unless recording. Returns the new state.
    pub fn push(&mut self, window: FeatureVector<T>) -> TrainingState {
        if self.state == TrainingState::Recording {
            self.windows.push(window);
            if self.windows.len() >= self.required {
                self.state = TrainingState::Ready;
            }
        }
        self.state
    }

    /// Commits the recording into `profile`.
    pub fn accept(&mut self, profile: &Profile<T>) -> Result<Profile<T>, ClassifierError> {
        match self.state {
            TrainingState::Ready => {}
            TrainingState::Recording => {
                return Err(ClassifierError::Ordering(format!(
                    "recording of {} incomplete ({} of {} windows)",
                    self.label,
                    self.windows.len(),
                    self.required
                )))
            }
            done => return Err(ClassifierError::Ordering(format!("training already {done:?}").to_lowercase())),
        }
        let updated = if self.label.is_neutral() {
            train_neutral(profile, &self.windows)?
        } else {
            train_command(profile, self.label, &self.windows)?
        };
        self.state = TrainingState::Accepted;
        Ok(updated)
    }

    pub fn reject(&mut self) -> Result<(), ClassifierError> {
        match self.state {
            TrainingState::Recording | TrainingState::Ready => {
                self.windows.clear();
                self.state = TrainingState::Rejected;
                Ok(())
            }
            done => Err(ClassifierError::Ordering(format!("training already {done:?}").to_lowercase())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::FEATURE_LEN;

    fn windows(n: usize) -> Vec<FeatureVector<f64>> {
        (0..n).map(|k| FeatureVector(std::array::from_fn(|i| ((k * 31 + i * 7) % 11) as f64))).collect()
    }

    #[test]
    fn neutral_then_command_flow() {
        let mut s = TrainingSession::start("u", MentalCommand::Neutral);
        let mut p = Profile::<f64>::new("u");
        assert!(matches!(s.accept(&p), Err(ClassifierError::Ordering(_))));
        for w in windows(7) {
            s.push(w);
        }
        assert_eq!(s.state(), TrainingState::Ready);
        p = s.accept(&p).unwrap();
        assert_eq!(s.state(), TrainingState::Accepted);
        assert!(p.neutral_trained());
        assert!(s.accept(&p).is_err());

        let mut s = TrainingSession::start("u", MentalCommand::Push);
        for w in windows(7) {
            s.push(w);
        }
        s.reject().unwrap();
        assert_eq!(s.state(), TrainingState::Rejected);
        assert!(s.accept(&p).is_err());
        assert!(p.trained_labels.is_empty());
        assert_eq!(p.feature_mean.len(), FEATURE_LEN);
    }

    #[test]
    fn extra_windows_after_ready_are_ignored() {
        let mut s = TrainingSession::<f64>::start("u", MentalCommand::Lift);
        for w in windows(10) {
            s.push(w);
        }
        assert_eq!(s.windows().len(), 7);
    }
}
