#include <stdio.h>
#include <string.h>

#include "seqlens.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: smoke <dataset-dir>\n");
        return 2;
    }
    SeqlensEngine *engine = NULL;
    if (seqlens_engine_load(argv[1], NULL, NULL, &engine) != SEQLENS_STATUS_OK) {
        fprintf(stderr, "load: %s\n", seqlens_last_error());
        return 1;
    }
    SeqlensSession *session = NULL;
    const char *query = "{\"sentinel\": {\"class\": \"ICD-10\"}, \"window_days\": 365}";
    if (seqlens_session_new(engine, query, 50, &session) != SEQLENS_STATUS_OK) {
        fprintf(stderr, "query: %s\n", seqlens_last_error());
        return 1;
    }
    size_t matched = 0, unmatched = 0;
    seqlens_session_counts(session, &matched, &unmatched);
    char *points = NULL;
    if (seqlens_session_scatter_json(session, 0, &points) != SEQLENS_STATUS_OK) {
        fprintf(stderr, "scatter: %s\n", seqlens_last_error());
        return 1;
    }
    printf("matched=%zu unmatched=%zu json_bytes=%zu version=%s\n", matched, unmatched, strlen(points),
           seqlens_version());
    seqlens_string_free(points);
    if (seqlens_session_drill_down_json(session, "NOPE/NOPE", &points) != SEQLENS_STATUS_NOT_FOUND) {
        return 1;
    }
    seqlens_session_free(session);
    seqlens_engine_free(engine);
    return 0;
}
