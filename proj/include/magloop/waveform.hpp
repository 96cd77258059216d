#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "magloop/rng.hpp"

namespace magloop {

/// Applied-field waveform b(t) in gauss, evaluable at any time in the
/// scenario horizon. The band-limited random kind is reproducible from its
/// seed: a fixed comb of equal-amplitude tones with seeded phases.
class FieldWaveform {
  public:
    enum class Kind { constant, step, sinusoid, bandlimited_noise, samples };

    static FieldWaveform constant(double amplitude_g) {
        FieldWaveform w;
        w.kind_ = Kind::constant;
        w.amplitude_ = amplitude_g;
        return w;
    }

    static FieldWaveform step(double amplitude_g, double start_s) {
        FieldWaveform w;
        w.kind_ = Kind::step;
        w.amplitude_ = amplitude_g;
        w.start_ = start_s;
        return w;
    }

    static FieldWaveform sinusoid(double amplitude_g, double frequency_hz, double start_s = 0.0) {
        FieldWaveform w;
        w.kind_ = Kind::sinusoid;
        w.amplitude_ = amplitude_g;
        w.frequency_ = frequency_hz;
        w.start_ = start_s;
        return w;
    }

    /// Equal-amplitude tones at k*bandwidth/n_tones for k = 1..n_tones with
    /// seeded uniform phases; the analytic rms is rms_g exactly.
    static FieldWaveform bandlimited_noise(double rms_g, double bandwidth_hz, std::uint64_t seed,
                                           int n_tones = 64) {
        if (n_tones < 1) throw std::invalid_argument("need at least one tone");
        FieldWaveform w;
        w.kind_ = Kind::bandlimited_noise;
        w.amplitude_ = rms_g * std::sqrt(2.0 / n_tones);
        w.frequency_ = bandwidth_hz;
        w.seed_ = seed;
        Rng rng(seed);
        w.phases_.resize(n_tones);
        for (double& ph : w.phases_) ph = 2.0 * M_PI * rng.uniform01();
        return w;
    }

    static FieldWaveform from_samples(double dt_s, std::vector<double> values_g) {
        if (!(dt_s > 0.0) || values_g.empty()) throw std::invalid_argument("bad sample waveform");
        FieldWaveform w;
        w.kind_ = Kind::samples;
        w.sample_dt_ = dt_s;
        w.samples_ = std::move(values_g);
        return w;
    }

    double operator()(double t) const {
        switch (kind_) {
            case Kind::constant: return amplitude_;
            case Kind::step: return t >= start_ ? amplitude_ : 0.0;
            case Kind::sinusoid:
                return t >= start_ ? amplitude_ * std::sin(2.0 * M_PI * frequency_ * (t - start_)) : 0.0;
            case Kind::bandlimited_noise: {
                const double df = frequency_ / static_cast<double>(phases_.size());
                double b = 0.0;
                for (std::size_t k = 0; k < phases_.size(); ++k)
                    b += amplitude_ * std::cos(2.0 * M_PI * df * static_cast<double>(k + 1) * t + phases_[k]);
                return b;
            }
            case Kind::samples: {
                // linear interpolation, clamped at the ends
                if (t <= 0.0) return samples_.front();
                const double x = t / sample_dt_;
                const auto i = static_cast<std::size_t>(x);
                if (i + 1 >= samples_.size()) return samples_.back();
                const double f = x - static_cast<double>(i);
                return samples_[i] * (1.0 - f) + samples_[i + 1] * f;
            }
        }
        return 0.0;
    }

    Kind kind() const { return kind_; }
    double amplitude() const { return amplitude_; }
    double frequency_hz() const { return frequency_; }
    double start_s() const { return start_; }
    std::uint64_t seed() const { return seed_; }
    int n_tones() const { return static_cast<int>(phases_.size()); }

  private:
    Kind kind_ = Kind::constant;
    double amplitude_ = 0.0;
    double frequency_ = 0.0;
    double start_ = 0.0;
    std::uint64_t seed_ = 0;
    std::vector<double> phases_;
    double sample_dt_ = 0.0;
    std::vector<double> samples_;
};

} // namespace magloop
