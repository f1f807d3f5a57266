#pragma once

#include <stdexcept>
#include <string>

namespace vpd {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define VPD_DEFINE_ERROR(Name)                  \
    class Name : public Error {                 \
    public:                                     \
        using Error::Error;                     \
    }

// geometry
VPD_DEFINE_ERROR(DegeneratePose);
VPD_DEFINE_ERROR(DimensionMismatch);

// synthetic oracle
VPD_DEFINE_ERROR(UnknownClass);
VPD_DEFINE_ERROR(BehindCamera);
VPD_DEFINE_ERROR(OutOfBounds);

// embedders and networks
VPD_DEFINE_ERROR(EmptyBatch);
VPD_DEFINE_ERROR(InsufficientViews);
VPD_DEFINE_ERROR(ShapeMismatch);
VPD_DEFINE_ERROR(MissingTeacherModel);

// corpus and feature store
VPD_DEFINE_ERROR(EmptySelection);
VPD_DEFINE_ERROR(EmptyBBox);
VPD_DEFINE_ERROR(CorruptHeader);

// downstream heads
VPD_DEFINE_ERROR(EmptySequence);
VPD_DEFINE_ERROR(SingleClass);
VPD_DEFINE_ERROR(EmptyTrainingSet);
VPD_DEFINE_ERROR(MissingFlippedFeatures);
VPD_DEFINE_ERROR(NoTestData);
VPD_DEFINE_ERROR(AllInfeasible);
VPD_DEFINE_ERROR(InsufficientPositives);
VPD_DEFINE_ERROR(NoGroundTruth);

// orchestration
VPD_DEFINE_ERROR(BadConfig);
VPD_DEFINE_ERROR(MissingModel);
VPD_DEFINE_ERROR(MissingArtifact);
VPD_DEFINE_ERROR(StaleManifest);

#undef VPD_DEFINE_ERROR

}  // namespace vpd
