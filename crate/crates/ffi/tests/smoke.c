#include <math.h>
#include <stdio.h>
#include <string.h>
#include "qdisc.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, qdisc_last_error()); return 1; } } while (0)

int main(void) {
    double p[2] = {0.5, 0.5}, q[2] = {0.25, 0.75};
    QdiscState *rho = NULL, *sigma = NULL;
    CHECK(qdisc_state_from_diag(p, 2, &rho) == QDISC_STATUS_OK);
    CHECK(qdisc_state_from_diag(q, 2, &sigma) == QDISC_STATUS_OK);
    double v = 0.0;
    CHECK(qdisc_divergence(QDISC_DIVERGENCE_UMEGAKI, 0.0, rho, sigma, &v) == QDISC_STATUS_OK);
    CHECK(fabs(v - (1.0 - 0.5 * log2(3.0))) < 1e-12);
    CHECK(qdisc_divergence(QDISC_DIVERGENCE_UMEGAKI, 0.0, NULL, sigma, &v) == QDISC_STATUS_NULL_POINTER);
    CHECK(strlen(qdisc_last_error()) > 0);

    QdiscChannel *e = NULL, *f = NULL;
    CHECK(qdisc_channel_replacer(rho, 2, &e) == QDISC_STATUS_OK);
    CHECK(qdisc_channel_replacer(sigma, 2, &f) == QDISC_STATUS_OK);
    CHECK(qdisc_geometric_channel_exact(2.0, e, f, &v) == QDISC_STATUS_OK);
    CHECK(fabs(v - log2(4.0 / 3.0)) < 1e-10);

    QdiscReport *r = NULL;
    CHECK(qdisc_suite_run("gentle", 7, 5, &r) == QDISC_STATUS_OK);
    CHECK(qdisc_report_cases(r) == 5 && qdisc_report_failures(r) == 0);
    char *json = NULL;
    CHECK(qdisc_report_json(r, &json) == QDISC_STATUS_OK);
    CHECK(strstr(json, "\"gentle\"") != NULL);
    qdisc_string_free(json);
    qdisc_report_free(r);

    qdisc_channel_free(e);
    qdisc_channel_free(f);
    qdisc_state_free(rho);
    qdisc_state_free(sigma);
    printf("ok %s\n", qdisc_version());
    return 0;
}
