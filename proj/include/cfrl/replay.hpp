#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace cfrl {

// Fixed-capacity FIFO ring with uniform sampling over the filled region.
template <typename T>
class ReplayBuffer {
public:
    explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
        items_.reserve(capacity);
    }

    void push(T item) {
        if (items_.size() < capacity_) {
            items_.push_back(std::move(item));
        } else {
            items_[cursor_] = std::move(item);
        }
        cursor_ = (cursor_ + 1) % capacity_;
        ++total_;
    }

    size_t size() const { return items_.size(); }
    size_t capacity() const { return capacity_; }
    uint64_t total_pushed() const { return total_; }

    const T& sample(std::mt19937_64& rng) const {
        if (items_.empty()) throw std::logic_error("sample from empty replay buffer");
        std::uniform_int_distribution<size_t> pick(0, items_.size() - 1);
        return items_[pick(rng)];
    }

    // Oldest-first snapshot of the retained items (tests and diagnostics).
    std::vector<T> ordered() const {
        std::vector<T> out;
        out.reserve(items_.size());
        if (items_.size() < capacity_) {
            out = items_;
        } else {
            for (size_t i = 0; i < capacity_; ++i) out.push_back(items_[(cursor_ + i) % capacity_]);
        }
        return out;
    }

private:
    size_t capacity_;
    size_t cursor_ = 0;
    uint64_t total_ = 0;
    std::vector<T> items_;
};

}  // namespace cfrl
