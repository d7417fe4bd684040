#pragma once

// Spatial block resampling: a rectangular tiling of the domain, the block
// bootstrap, block cross-validation folds and survey downsampling.

#include "mspp/core_model.hpp"
#include "mspp/solver.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mspp {

struct BlockPartition {
    std::vector<std::size_t> block_of;  // per cell
    std::size_t n_blocks = 0;
    std::size_t nx = 0, ny = 0;
    double side_x = 0.0, side_y = 0.0;
    double origin_x = 0.0, origin_y = 0.0;
};

/// Grid-aligned tiling of the bounding box of the cell locations, anchored at
/// its lower-left corner. Throws DataError for an empty field and ConfigError
/// for non-positive sides.
BlockPartition make_partition(const CovariateField& field, double side_x, double side_y);

/// Row indices of a bundle grouped by block.
struct BlockMembership {
    std::vector<std::vector<std::size_t>> sites;                    // [block] survey rows
    std::vector<std::vector<std::vector<std::size_t>>> presence;    // [block][species] record positions
    std::vector<std::vector<std::size_t>> background;               // [block] background positions
};

BlockMembership block_membership(const DataBundle& data, const BlockPartition& partition);

/// Bundle made of the rows of `blocks`, in the given order; repeated blocks
/// repeat their rows. Background weights are kept as they are.
DataBundle bundle_from_blocks(const DataBundle& data, const BlockMembership& membership,
                              std::span<const std::size_t> blocks);

struct BootstrapResult {
    std::vector<CoefficientSet> replicates;  // successful replicates, in replicate order
    std::vector<std::size_t> replicate_ids;
    std::size_t failed = 0;
    std::vector<std::string> failures;  // "replicate <i>: <reason>"
    Vector lower;  // 2.5% percentile per flattened coefficient
    Vector upper;  // 97.5% percentile
};

/// Resamples all blocks with replacement `replicates` times and refits.
/// Replicate i uses its own random stream, so results do not depend on the
/// thread count. Failed or non-converged refits are dropped and counted.
BootstrapResult block_bootstrap(const DataBundle& data, const BlockPartition& partition,
                                std::size_t replicates, const SolverOptions& options,
                                const ModelOptions& model, std::uint64_t seed,
                                double lower_quantile = 0.025, double upper_quantile = 0.975);

/// Sample quantile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

struct FoldAssignment {
    std::vector<int> fold_of_block;  // -1 for excluded blocks
    std::size_t n_folds = 0;
    std::size_t fold_size(std::size_t fold) const;
    std::size_t n_excluded() const;
};

/// Permutes the blocks and deals the first n_folds * floor(B / n_folds) of
/// them round-robin; the remainder is excluded. Throws ConfigError when
/// n_folds is zero or exceeds the block count.
FoldAssignment block_cv_folds(const BlockPartition& partition, std::size_t n_folds, std::uint64_t seed);

struct FoldSplit {
    DataBundle train;
    DataBundle test;
};

/// Training data are the rows in other folds' blocks; test data are the rows
/// in this fold's blocks. Rows in excluded blocks appear in neither.
FoldSplit split_fold(const DataBundle& data, const BlockPartition& partition,
                     const FoldAssignment& folds, std::size_t fold);

/// Number of rows (survey, presence or background) of `train` whose cell lies
/// in a block that is not a training block for `fold`.
std::size_t count_leaked_rows(const DataBundle& train, const BlockPartition& partition,
                              const FoldAssignment& folds, std::size_t fold);

/// Masks survey rows of species k so exactly n_keep of its currently observed
/// sites remain. Other species are untouched. Throws ConfigError when n_keep
/// exceeds the observed count.
SurveyDataset downsample_pa(const SurveyDataset& survey, SpeciesId k, std::size_t n_keep,
                            std::uint64_t seed);

} // namespace mspp
