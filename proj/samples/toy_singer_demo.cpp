// Generates one synthetic singer utterance, extracts the feature stack, and
// prints a short summary. Writes the audio next to the binary.

#include <algorithm>
#include <iostream>

#include "hqsvc/hqsvc.hpp"

int main() {
  hqsvc::ToyCorpusSpec spec;
  spec.n_singers = 5;
  const auto singer = hqsvc::make_singer(spec, 2);
  const auto utt = hqsvc::synthesize_utterance(spec, singer, 0);
  hqsvc::write_wav(utt.audio, "toy_singer.wav",
                   hqsvc::WavEncoding::kFloat32);

  const auto mel = hqsvc::mel_spectrogram(utt.audio);
  const auto fb = hqsvc::extract_features(utt.audio);
  int voiced = 0;
  float lo = 1e9f, hi = 0.0f;
  for (int t = 0; t < fb.frames.n_frames; ++t)
    if (fb.frames.voiced[t] > 0.5f) {
      ++voiced;
      lo = std::min(lo, fb.frames.f0[t]);
      hi = std::max(hi, fb.frames.f0[t]);
    }

  std::cout << "singer 2 range: [" << singer.f0_low << ", " << singer.f0_high
            << "] Hz\n"
            << "utterance: " << utt.audio.duration_s() << " s, scripted mean "
            << utt.f0_mean << " Hz\n"
            << "mel: " << mel.n_frames << " frames x " << mel.n_mels
            << " bands\n"
            << "features: " << fb.frames.n_frames << " frames, voiced "
            << voiced << ", tracked range [" << lo << ", " << hi << "] Hz\n"
            << "content width: " << hqsvc::kContentCepstra
            << ", speaker width: " << fb.spk_raw.size() << "\n"
            << "wrote toy_singer.wav\n";
  return 0;
}
