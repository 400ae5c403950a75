#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gsdiff/primitives.hpp"
#include "gsdiff/random.hpp"
#include "test_support.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>

using namespace gsdiff;
using gsdiff::testing::central_diff;

TEST_CASE("covariance_from: unit scales, identity rotation") {
    const Mat3 sigma = covariance_from(Vec3::Zero(), Quat::Identity());
    CHECK((sigma - Mat3::Identity()).norm() < 1e-12);
}

TEST_CASE("covariance_from: squared scales on the diagonal") {
    const Mat3 sigma = covariance_from(Vec3(std::log(Real(2)), 0, 0), Quat::Identity());
    CHECK(sigma(0, 0) == doctest::Approx(4.0).epsilon(gsdiff::testing::kValueEps));
    CHECK(sigma(1, 1) == doctest::Approx(1.0).epsilon(gsdiff::testing::kValueEps));
    CHECK(sigma(2, 2) == doctest::Approx(1.0).epsilon(gsdiff::testing::kValueEps));
    CHECK(std::abs(sigma(0, 1)) < 1e-12);
}

TEST_CASE("covariance_from: isotropic scale is rotation invariant") {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const Quat q =
            Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
        const Real s = rng.uniform(Real(0.2), Real(3));
        const Mat3 sigma = covariance_from(Vec3::Constant(std::log(s)), q);
        CHECK(double((sigma - s * s * Mat3::Identity()).norm()) <
              gsdiff::testing::kAlgebraTol * double(s * s));
    }
}

TEST_CASE("covariance_from: symmetric PD with the exact eigenvalue multiset") {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 ls(rng.uniform(Real(-2), Real(1)), rng.uniform(Real(-2), Real(1)),
                      rng.uniform(Real(-2), Real(1)));
        const Quat q =
            Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
        const Mat3 sigma = covariance_from(ls, q);
        CHECK((sigma - sigma.transpose()).norm() < 1e-9);

        Eigen::SelfAdjointEigenSolver<Mat3> es(sigma);
        Vec3 expected = (Real(2) * ls).array().exp();
        std::sort(expected.data(), expected.data() + 3);
        for (int c = 0; c < 3; ++c) {
            CHECK(es.eigenvalues()[c] ==
                  doctest::Approx(expected[c]).epsilon(gsdiff::testing::kAlgebraTol));
            CHECK(es.eigenvalues()[c] > 0);
        }
    }
}

TEST_CASE("covariance_from backward matches finite differences") {
    Rng rng(3);
    Vec3 ls(Real(0.1), Real(-0.4), Real(0.3));
    Quat q = Quat(Real(0.9), Real(0.2), Real(-0.3), Real(0.1)).normalized();
    Mat3 dSigma;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) dSigma(r, c) = rng.normal();

    const CovarianceBackward back = covariance_from_backward(ls, q, dSigma);
    auto loss = [&]() { return covariance_from(ls, q).cwiseProduct(dSigma).sum(); };

    for (int c = 0; c < 3; ++c) {
        const Real fd = central_diff(loss, &ls[c], gsdiff::testing::kUnitFdStep);
        CHECK(back.dlog_scale[c] ==
              doctest::Approx(fd).epsilon(gsdiff::testing::kUnitFdEps));
    }
    Real* qc[4] = {&q.w(), &q.x(), &q.y(), &q.z()};
    for (int c = 0; c < 4; ++c) {
        const Real fd = central_diff(loss, qc[c], gsdiff::testing::kUnitFdStep);
        CHECK(back.drotation[c] ==
              doctest::Approx(fd).epsilon(gsdiff::testing::kUnitFdEps));
    }
}

// ---------------------------------------------------------------------------

TEST_CASE("project_gaussian: isotropic on-axis covariance is (f sigma / z)^2") {
    CameraIntrinsics intr{Real(80), Real(80), Real(32), Real(32), 64, 64};
    Gaussian3D g;
    const Real sigma = Real(0.2), z = Real(4);
    g.mu = Vec3(0, 0, z);
    g.log_scale = Vec3::Constant(std::log(sigma));
    g.sh.assign(1, Vec3::Zero());
    const auto splat = project_gaussian(g, intr, Pose{});
    REQUIRE(splat.has_value());
    const Real expected = (intr.fx * sigma / z) * (intr.fx * sigma / z);
    CHECK(splat->cov2d(0, 0) ==
          doctest::Approx(expected).epsilon(gsdiff::testing::kValueEps));
    CHECK(splat->cov2d(1, 1) ==
          doctest::Approx(expected).epsilon(gsdiff::testing::kValueEps));
    CHECK(std::abs(splat->cov2d(0, 1)) < 1e-12);
    CHECK(splat->depth == doctest::Approx(z));
    CHECK(splat->mean2d.x() == doctest::Approx(32.0));
}

TEST_CASE("project_gaussian: behind the camera is culled") {
    CameraIntrinsics intr{Real(80), Real(80), Real(32), Real(32), 64, 64};
    Gaussian3D g;
    g.mu = Vec3(0, 0, -2);
    g.sh.assign(1, Vec3::Zero());
    CHECK(!project_gaussian(g, intr, Pose{}).has_value());
}

TEST_CASE("project_gaussian: doubling depth halves the projected deviation") {
    CameraIntrinsics intr{Real(80), Real(80), Real(32), Real(32), 64, 64};
    Gaussian3D g;
    g.log_scale = Vec3::Constant(std::log(Real(0.15)));
    g.sh.assign(1, Vec3::Zero());
    g.mu = Vec3(0, 0, 2);
    const auto near_splat = project_gaussian(g, intr, Pose{});
    g.mu = Vec3(0, 0, 4);
    const auto far_splat = project_gaussian(g, intr, Pose{});
    REQUIRE(near_splat.has_value());
    REQUIRE(far_splat.has_value());
    CHECK(std::sqrt(near_splat->cov2d(0, 0)) ==
          doctest::Approx(2 * std::sqrt(far_splat->cov2d(0, 0)))
              .epsilon(gsdiff::testing::kValueEps));
}

TEST_CASE("projection Jacobian matches finite differences") {
    CameraIntrinsics intr{Real(70), Real(64), Real(30), Real(34), 64, 64};
    Rng rng(4);
    Pose pose;
    pose.rotation =
        Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
    pose.translation = Vec3(Real(0.2), Real(-0.1), Real(3.5));

    for (int trial = 0; trial < 10; ++trial) {
        Vec3 mu(rng.uniform(Real(-0.6), Real(0.6)), rng.uniform(Real(-0.6), Real(0.6)),
                rng.uniform(Real(-0.5), Real(0.5)));
        Vec3 ls(rng.uniform(Real(-2.5), Real(-1)), rng.uniform(Real(-2.5), Real(-1)),
                rng.uniform(Real(-2.5), Real(-1)));
        Quat q = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
        if (!project_mean_cov(mu, covariance_from(ls, q), intr, pose)) continue;

        // random cotangents over (mean2d, cov2d, depth)
        const Vec2 dmean(rng.normal(), rng.normal());
        Mat2 dcov;
        dcov << rng.normal(), rng.normal(), rng.normal(), rng.normal();
        const Real ddepth = rng.normal();

        auto loss = [&]() -> Real {
            const Mat3 sigma = covariance_from(ls, q);
            const auto proj = project_mean_cov(mu, sigma, intr, pose);
            REQUIRE(proj.has_value());
            return proj->mean2d.dot(dmean) + proj->cov2d.cwiseProduct(dcov).sum() +
                   proj->depth * ddepth;
        };

        const Mat3 sigma = covariance_from(ls, q);
        const ProjectionBackward pb =
            project_mean_cov_backward(mu, sigma, intr, pose, dmean, dcov, ddepth);
        const CovarianceBackward cb = covariance_from_backward(ls, q, pb.dsigma);

        for (int c = 0; c < 3; ++c) {
            const Real fd = central_diff(loss, &mu[c], gsdiff::testing::kUnitFdStep);
            CHECK(pb.dmu[c] == doctest::Approx(fd).epsilon(gsdiff::testing::kUnitFdEps));
        }
        for (int c = 0; c < 3; ++c) {
            const Real fd = central_diff(loss, &ls[c], gsdiff::testing::kUnitFdStep);
            CHECK(cb.dlog_scale[c] ==
                  doctest::Approx(fd).epsilon(gsdiff::testing::kUnitFdEps));
        }
        Real* qc[4] = {&q.w(), &q.x(), &q.y(), &q.z()};
        for (int c = 0; c < 4; ++c) {
            const Real fd = central_diff(loss, qc[c], gsdiff::testing::kUnitFdStep);
            CHECK(cb.drotation[c] ==
                  doctest::Approx(fd).epsilon(gsdiff::testing::kUnitFdEps));
        }
    }
}

// ---------------------------------------------------------------------------

namespace {
Splat2D demo_splat() {
    Splat2D s;
    s.mean2d = Vec2(8, 8);
    s.cov2d = Mat2::Identity();
    s.depth = 3;
    s.opacity = Real(1);
    s.color = Vec3(1, 0, 0);
    return s;
}
} // namespace

TEST_CASE("apply_mip_filter: zero variance is the exact identity") {
    const Splat2D s = demo_splat();
    const Splat2D out = apply_mip_filter(s, 0);
    CHECK(out.cov2d == s.cov2d);
    CHECK(out.opacity == s.opacity);
}

TEST_CASE("apply_mip_filter: determinant-ratio compensation") {
    const Splat2D out = apply_mip_filter(demo_splat(), Real(0.1));
    CHECK(out.cov2d(0, 0) == doctest::Approx(1.1).epsilon(gsdiff::testing::kValueEps));
    CHECK(out.opacity ==
          doctest::Approx(std::sqrt(1.0 / 1.21)).epsilon(gsdiff::testing::kValueEps));
    CHECK(out.opacity == doctest::Approx(0.9091).epsilon(1e-3));
}

TEST_CASE("apply_mip_filter conserves opacity * sqrt(det)") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        Splat2D s = demo_splat();
        const Real a = rng.uniform(Real(0.3), Real(4));
        const Real b = rng.uniform(Real(0.3), Real(4));
        const Real c = rng.uniform(Real(-0.4), Real(0.4)) * std::sqrt(a * b);
        s.cov2d << a, c, c, b;
        s.opacity = rng.uniform(Real(0.05), Real(1));
        const Real energy = s.opacity * std::sqrt(s.cov2d.determinant());

        const Real filter = rng.uniform(Real(0), Real(40)); // includes very large s
        const Splat2D out = apply_mip_filter(s, filter);
        const Real energy_out = out.opacity * std::sqrt(out.cov2d.determinant());
        CHECK(energy_out ==
              doctest::Approx(energy).epsilon(gsdiff::testing::kDoubleReal ? 1e-9 : 1e-5));
        if (filter > 20) CHECK(out.opacity < s.opacity * Real(0.25));
    }
}

TEST_CASE("apply_mip_filter backward matches finite differences") {
    Rng rng(6);
    Splat2D s = demo_splat();
    s.cov2d << Real(2.0), Real(0.3), Real(0.3), Real(1.2);
    s.opacity = Real(0.7);
    Mat2 dcov_post;
    dcov_post << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    const Real dop_post = rng.normal();
    const Real filter = Real(0.1);

    auto loss = [&]() {
        const Splat2D out = apply_mip_filter(s, filter);
        return out.cov2d.cwiseProduct(dcov_post).sum() + out.opacity * dop_post;
    };
    const MipBackward back = apply_mip_filter_backward(s, filter, dcov_post, dop_post);

    Real* cov_entries[4] = {&s.cov2d(0, 0), &s.cov2d(0, 1), &s.cov2d(1, 0),
                            &s.cov2d(1, 1)};
    const Real analytic[4] = {back.dcov2d(0, 0), back.dcov2d(0, 1), back.dcov2d(1, 0),
                              back.dcov2d(1, 1)};
    for (int c = 0; c < 4; ++c) {
        const Real fd = central_diff(loss, cov_entries[c], gsdiff::testing::kUnitFdStep);
        CHECK(analytic[c] == doctest::Approx(fd).epsilon(gsdiff::testing::kUnitFdEps));
    }
    const Real fd_op = central_diff(loss, &s.opacity, gsdiff::testing::kUnitFdStep);
    CHECK(back.dopacity == doctest::Approx(fd_op).epsilon(gsdiff::testing::kUnitFdEps));
}
