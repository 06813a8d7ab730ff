#pragma once

#include <cstddef>
#include <limits>

namespace mgm {

/// Patience counter. A value that is not strictly worse than the best seen
/// so far resets the counter (and becomes the new best); `patience`
/// consecutive strictly-worse values stop training. Patience 0 disables.
class EarlyStopping {
public:
    enum class Mode { minimize, maximize };

    EarlyStopping(std::size_t patience, Mode mode) : patience_(patience), mode_(mode) {
        best_ = mode == Mode::minimize ? std::numeric_limits<double>::infinity()
                                       : -std::numeric_limits<double>::infinity();
    }

    /// Records a value; returns true when it is the new best.
    bool update(double value) {
        const bool worse = mode_ == Mode::minimize ? value > best_ : value < best_;
        if (!worse) {
            best_ = value;
            bad_ = 0;
            return true;
        }
        ++bad_;
        return false;
    }

    bool should_stop() const { return patience_ > 0 && bad_ >= patience_; }
    double best() const { return best_; }
    std::size_t bad_epochs() const { return bad_; }

private:
    std::size_t patience_;
    Mode mode_;
    double best_;
    std::size_t bad_ = 0;
};

}  // namespace mgm
